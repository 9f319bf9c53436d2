"""Training and evaluation loops driven by an :class:`ExperimentConfig`."""
from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import data as D
from .. import kernels
from ..nn import CrossEntropy, SGD, build_cifarnet, build_lenet5, save_model
from ..nn.models import Model
from ..tensor import a_key, a_to_float64
from .config import ConfigError, ExperimentConfig

log = logging.getLogger(__name__)

CSV_HEADER = ["epoch", "step", "train_loss", "test_acc", "seconds"]
MNIST_MEAN, MNIST_STD = 0.5, 0.5


@dataclass
class RunResult:
    rows: list = field(default_factory=list)
    final_accuracy: float = float("nan")
    checkpoint: Path | None = None
    metrics: Path | None = None
    boundary_calls: int = 0
    steps: int = 0


def synthetic_dataset(n: int, split: str, seed: int, channels: int = 1, size: int = 28) -> D.Dataset:
    """Learnable random data: each class is a fixed template plus noise."""
    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    templates = np.random.default_rng(seed).uniform(0, 1, (10, channels, size, size))
    labels = rng.integers(0, 10, n)
    noise = rng.normal(0, 0.15, (n, channels, size, size))
    images = np.clip(templates[labels] + noise, 0, 1)
    return D.Dataset(images, labels.astype(np.int64), split, "synthetic")


def load_datasets(cfg: ExperimentConfig) -> tuple[D.Dataset, D.Dataset]:
    if cfg.dataset == "synthetic":
        ch, size = (3, 32) if cfg.model == "cifarnet" else (1, 28)
        n = cfg.subset or 512
        train = synthetic_dataset(n, "train", cfg.seed, ch, size)
        test = synthetic_dataset(cfg.test_subset or 256, "test", cfg.seed, ch, size)
        mean, std = [MNIST_MEAN] * ch, [MNIST_STD] * ch
    else:
        root = cfg.resolved_data_dir()
        if not root.is_dir():
            raise ConfigError(f"dataset directory not found: {root}")
        if cfg.dataset == "cifar10":
            train, test = D.load_cifar10(root, "train"), D.load_cifar10(root, "test")
            mean, std = D.channel_stats(train)
            log.info("cifar10 channel mean %s std %s", mean.round(4), std.round(4))
        else:
            train = D.load_idx_dir(root, "train", cfg.dataset)
            test = D.load_idx_dir(root, "test", cfg.dataset)
            mean, std = [MNIST_MEAN], [MNIST_STD]
    train = D.normalize(train.subset(cfg.subset or None), mean, std)
    test = D.normalize(test.subset(cfg.test_subset or None), mean, std)
    return train, test


def build_model(cfg: ExperimentConfig, prec=None) -> Model:
    prec = prec or cfg.precisions()
    if cfg.model == "lenet5":
        return build_lenet5(prec, activation=cfg.activation, pool=cfg.pool, seed=cfg.seed,
                            workers=cfg.workers)
    return build_cifarnet(prec, seed=cfg.seed, workers=cfg.workers)


def predict(model: Model, x: np.ndarray) -> np.ndarray:
    logits = model(x)
    return np.argmax(a_key(logits, model.prec.forward), axis=1)


def evaluate(model: Model, ds: D.Dataset, batch_size: int = 256) -> float:
    """Test accuracy in percent."""
    model.eval()
    correct = 0
    for xb, yb in D.batches(ds, batch_size, None, model.prec.forward):
        correct += int(np.sum(predict(model, xb) == yb))
    model.train()
    return 100.0 * correct / max(len(ds), 1)


def _format_row(row: dict) -> list:
    acc = row["test_acc"]
    return [row["epoch"], row["step"], f"{row['train_loss']:.6f}",
            "" if math.isnan(acc) else f"{acc:.2f}", f"{row['seconds']:.3f}"]


def metrics_csv(rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(_format_row(r))
    return buf.getvalue()


def train(cfg: ExperimentConfig, *, datasets=None, progress=None) -> RunResult:
    """Run the full loop; writes ``metrics.csv``, ``model.pnn`` and ``config.txt``
    under ``cfg.out``."""
    prec = cfg.precisions()
    train_ds, test_ds = datasets or load_datasets(cfg)
    model = build_model(cfg, prec)
    loss_fn = CrossEntropy(prec, workers=cfg.workers)
    opt = SGD(model.params(), cfg.lr, cfg.momentum, grad_scale_log2=cfg.grad_scale)
    log.info("training %s on %s (%d samples): %s", cfg.model, cfg.dataset, len(train_ds),
             prec.describe())
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    res = RunResult()
    t0 = time.perf_counter()
    step = 0
    boundary0 = kernels.float_boundary_calls
    for epoch in range(1, cfg.epochs + 1):
        if cfg.lr_decay_epoch and epoch == cfg.lr_decay_epoch + 1:
            opt.set_lr(cfg.lr * cfg.lr_decay_factor)
        model.train()
        loss_sum, nb = 0.0, 0
        for xb, yb in D.batches(train_ds, cfg.batch_size, cfg.seed, prec.forward, epoch=epoch):
            logits = model(xb)
            loss = loss_fn.forward(logits, yb)
            model.backward(loss_fn.backward(cfg.grad_scale))
            opt.step()
            step += 1
            loss_sum += float(a_to_float64(loss, prec.loss))
            nb += 1
            if progress:
                progress(epoch, step, loss_sum / nb)
        last = epoch == cfg.epochs
        acc = evaluate(model, test_ds) if (epoch % cfg.eval_every == 0 or last) else float("nan")
        secs = time.perf_counter() - t0 if cfg.timing else 0.0
        row = dict(epoch=epoch, step=step, train_loss=loss_sum / max(nb, 1), test_acc=acc,
                   seconds=secs)
        res.rows.append(row)
        log.info("epoch %d step %d loss %.4f acc %s (%.1fs)", epoch, step, row["train_loss"],
                 "-" if math.isnan(acc) else f"{acc:.2f}", time.perf_counter() - t0)
    res.final_accuracy = res.rows[-1]["test_acc"]
    res.steps = step
    res.boundary_calls = kernels.float_boundary_calls - boundary0
    res.metrics = out / "metrics.csv"
    res.metrics.write_text(metrics_csv(res.rows))
    res.checkpoint = out / "model.pnn"
    save_model(model, res.checkpoint)
    (out / "config.txt").write_text(cfg.dumps())
    return res
