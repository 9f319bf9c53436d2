"""Experiment configuration: flat ``key = value`` files and named presets."""
from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..nn.precision import StagePrecisions
from ..tensor import FLOAT32, parse_kind


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "lenet5"
    dataset: str = "fashion-mnist"
    data_dir: str = ""
    epochs: int = 10
    batch_size: int = 64
    lr: float = 0.01
    lr_decay_epoch: int = 0
    lr_decay_factor: float = 0.1
    momentum: float = 0.9
    seed: int = 0
    forward: str = "float32"
    backward: str = ""
    gradient: str = ""
    optimizer: str = ""
    loss: str = ""
    quire: bool = False
    quire_optimizer: bool = False
    grad_scale: int = 0
    activation: str = "tanh"
    pool: str = "max"
    workers: int = 1
    subset: int = 0
    test_subset: int = 0
    eval_every: int = 1
    timing: bool = True
    out: str = "runs/latest"

    def __post_init__(self):
        if self.model not in ("lenet5", "cifarnet"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.dataset not in ("fashion-mnist", "mnist", "cifar10", "synthetic"):
            raise ConfigError(f"unknown dataset {self.dataset!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.workers < 1 or self.eval_every < 1:
            raise ConfigError("epochs, batch_size, workers and eval_every must be positive")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        for stage in ("forward", "backward", "gradient", "optimizer", "loss"):
            text = getattr(self, stage)
            if text:
                try:
                    parse_kind(text)
                except ValueError as exc:
                    raise ConfigError(f"{stage}: {exc}") from None

    def precisions(self) -> StagePrecisions:
        opt = lambda t: t or None  # noqa: E731
        return StagePrecisions.build(self.forward, opt(self.backward), opt(self.gradient),
                                     opt(self.optimizer), opt(self.loss), quire=self.quire,
                                     quire_optimizer=self.quire_optimizer)

    def float_reference(self) -> "ExperimentConfig":
        """Same run with float32 in every stage."""
        return replace(self, forward=FLOAT32.name, backward="", gradient="", optimizer="",
                       loss="", quire=False, quire_optimizer=False)

    def resolved_data_dir(self) -> Path:
        if self.data_dir:
            return Path(self.data_dir)
        root = Path(os.environ.get("POSITNN_DATA", "data"))
        return root / self.dataset

    def dumps(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _coerce(key: str, text: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    typ = _FIELDS[key].type
    text = text.strip()
    if typ in ("bool", bool):
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {text!r}")
    if typ in ("int", int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {text!r}") from None
    if typ in ("float", float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {text!r}") from None
    return text


def parse_overrides(pairs: dict) -> dict:
    return {k: _coerce(k, str(v)) for k, v in pairs.items()}


def loads(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.  ``preset = NAME`` first
    loads that preset, later keys override it."""
    values: dict = {}
    preset = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            preset = val
            continue
        values[key] = _coerce(key, val)
    start = get_preset(preset) if preset else (base or ExperimentConfig())
    try:
        return replace(start, **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load(path) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return loads(p.read_text())


# ---------------------------------------------------------------------------
# Presets: one per cell of the paper's result tables.

def _uniform(fmt: str, quire: bool, **kw) -> ExperimentConfig:
    return ExperimentConfig(forward=fmt, quire=quire, **kw)


def _mixed(opt_bits: int, loss_bits: int, **kw) -> ExperimentConfig:
    return ExperimentConfig(forward="8:2", optimizer=f"{opt_bits}:2", loss=f"{loss_bits}:2",
                            quire=True, **kw)


_CIFAR = dict(model="cifarnet", dataset="cifar10", lr=0.02, lr_decay_epoch=8, activation="relu")

PRESETS: dict[str, ExperimentConfig] = {
    # uniform posit, no quire (Fashion-MNIST, LeNet-5)
    "table2-float": _uniform("float32", False),
    "table2-posit16": _uniform("16:1", False),
    "table2-posit12": _uniform("12:1", False),
    "table2-posit10": _uniform("10:1", False),
    "table2-posit8": _uniform("8:0", False),
    # uniform posit with quire
    "table3-float": _uniform("float32", False),
    "table3-posit10-quire": _uniform("10:1", True),
    "table3-posit80-quire": _uniform("8:0", True),
    "table3-posit81-quire": _uniform("8:1", True),
    "table3-posit82-quire": _uniform("8:2", True),
    # posit(8,2) with quire, wider optimizer (O) and loss (L)
    "table4-float": _uniform("float32", False),
    "table4-O12L8": _mixed(12, 8),
    "table4-O12L12": _mixed(12, 12),
    "table4-O12L10": _mixed(12, 10),
    "table4-O10L10": _mixed(10, 10),
    # posit(8,2)* across datasets
    "table5-mnist-float": _uniform("float32", False, dataset="mnist"),
    "table5-mnist-posit82star": _mixed(12, 10, dataset="mnist"),
    "table5-fashion-float": _uniform("float32", False),
    "table5-fashion-posit82star": _mixed(12, 10),
    "table5-cifar-float": _uniform("float32", False, **_CIFAR),
    "table5-cifar-posit82star": _mixed(12, 10, **_CIFAR),
}
PRESETS["O12L10"] = PRESETS["table4-O12L10"]
PRESETS["posit82star"] = PRESETS["table4-O12L10"]

# paper accuracy for each preset (percent), used in docs and reports
PAPER_ACCURACY = {
    "table2-float": 90.42, "table2-posit16": 90.87, "table2-posit12": 90.15,
    "table2-posit10": 88.15, "table2-posit8": 10.00,
    "table3-float": 90.42, "table3-posit10-quire": 88.40, "table3-posit80-quire": 13.84,
    "table3-posit81-quire": 12.86, "table3-posit82-quire": 19.39,
    "table4-float": 90.42, "table4-O12L8": 88.40, "table4-O12L12": 90.07,
    "table4-O12L10": 90.25, "table4-O10L10": 88.08,
    "table5-mnist-float": 99.19, "table5-mnist-posit82star": 99.17,
    "table5-fashion-float": 90.42, "table5-fashion-posit82star": 90.25,
    "table5-cifar-float": 70.29, "table5-cifar-posit82star": 68.65,
}


def get_preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") \
            from None
