"""``positnn`` command line: train, eval, float-ref, verify, distribution.

Errors are reported on stderr as one JSON object per line, e.g.
``{"error": "ConfigError", "message": "unknown config key 'lrr'"}``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .. import kernels
from ..data import DataError
from ..nn import CheckpointError, load_model
from ..posit import PositConfig
from ..tensor import is_posit, kind_str, parse_kind
from . import config as C
from .distribution import distribution, histogram_csv, values_csv
from .train import build_model, evaluate, load_datasets, train
from .verify import SUITES, run_suite

log = logging.getLogger("positnn")

EXIT_USAGE = 2
EXIT_FAILED = 1


class CliError(Exception):
    pass


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="key = value config file")
    p.add_argument("--preset", help="named preset (see --list-presets)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--subset", type=int, help="truncate the training set to N samples")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("--data-dir", metavar="DIR", help="dataset directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="positnn", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("--backend", choices=("compiled", "python"),
                    help="kernel backend (default: compiled when available)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write metrics.csv + model.pnn")
    _add_run_flags(p)
    p.add_argument("--list-presets", action="store_true")

    p = sub.add_parser("float-ref", help="train the float32 reference of a config")
    _add_run_flags(p)

    p = sub.add_parser("eval", help="test accuracy of a saved checkpoint")
    _add_run_flags(p)
    p.add_argument("--checkpoint", metavar="PATH", help="default: OUT/model.pnn")
    p.add_argument("--format", metavar="KIND",
                   help="evaluate in this format (e.g. 32:2), converting the weights")

    p = sub.add_parser("verify", help="run numeric verification suites")
    p.add_argument("suite", nargs="?", default="all", choices=SUITES + ("all",))
    p.add_argument("--config", metavar="PATH", help="run config for the determinism suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, nargs="+", default=[1, 2, 4],
                   help="worker counts compared by the determinism suite")
    p.add_argument("--subset", type=int, default=512)
    p.add_argument("--out", metavar="DIR", help="also write the report here")

    p = sub.add_parser("distribution", help="enumerate all values of a posit format")
    p.add_argument("--format", default="8:0", metavar="N:ES")
    p.add_argument("--buckets", type=int, default=32, help="linear histogram buckets")
    p.add_argument("--out", metavar="DIR", default="runs/distribution")
    return ap


def _parse_sets(items: list) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise C.ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return C.parse_overrides(out)


def resolve_config(args) -> C.ExperimentConfig:
    cfg = C.get_preset(args.preset) if args.preset else C.ExperimentConfig()
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise C.ConfigError(f"config file not found: {path}")
        cfg = C.loads(path.read_text(), base=cfg)
    over = _parse_sets(args.set)
    for key in ("seed", "workers", "subset", "out"):
        val = getattr(args, key, None)
        if val is not None:
            over[key] = val
    if getattr(args, "data_dir", None):
        over["data_dir"] = args.data_dir
    try:
        return replace(cfg, **over)
    except TypeError as exc:
        raise C.ConfigError(str(exc)) from None


def _print_rows(res) -> None:
    for r in res.rows:
        acc = r["test_acc"]
        print(f"epoch {r['epoch']} step {r['step']} loss {r['train_loss']:.4f} "
              f"acc {'-' if acc != acc else f'{acc:.2f}'}")


def cmd_train(args, float_ref: bool = False) -> int:
    if getattr(args, "list_presets", False):
        for name in sorted(C.PRESETS):
            paper = C.PAPER_ACCURACY.get(name)
            print(f"{name:30s} {C.PRESETS[name].precisions().describe()}"
                  + (f"  (paper {paper:.2f}%)" if paper is not None else ""))
        return 0
    cfg = resolve_config(args)
    if float_ref:
        cfg = cfg.float_reference()
    datasets = load_datasets(cfg)   # fail on missing data before building anything
    res = train(cfg, datasets=datasets)
    _print_rows(res)
    print(f"final test accuracy {res.final_accuracy:.2f}%  metrics {res.metrics}  "
          f"checkpoint {res.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(cfg.out) / "model.pnn"
    if not ckpt.exists():
        raise CliError(f"checkpoint not found: {ckpt}")
    convert = False
    if args.format:
        kind = parse_kind(args.format)
        cfg = replace(cfg, forward=kind_str(kind), backward="", gradient="", optimizer="",
                      loss="", quire=is_posit(kind) and cfg.quire)
        convert = True
    if args.subset is not None:
        cfg = replace(cfg, test_subset=args.subset)
    _, test = load_datasets(replace(cfg, subset=1))
    model = load_model(build_model(cfg), ckpt, convert=convert)
    acc = evaluate(model, test)
    print(f"test accuracy {acc:.2f}% ({len(test)} samples, {cfg.precisions().describe()})")
    return 0


def cmd_verify(args) -> int:
    names = SUITES if args.suite == "all" else (args.suite,)
    ok = True
    text = []
    for name in names:
        kw = {}
        if name == "quire":
            kw = dict(seed=args.seed)
        elif name == "determinism":
            base = C.load(args.config) if args.config else replace(
                C.get_preset("O12L10"), dataset="synthetic", test_subset=128)
            kw = dict(cfg=replace(base, seed=args.seed, subset=args.subset, epochs=1),
                      workers=tuple(args.workers))
        rep = run_suite(name, **kw)
        print(rep.text(), flush=True)
        text.append(rep.text())
        ok &= rep.ok
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify.txt").write_text("\n".join(text) + "\n")
    return 0 if ok else EXIT_FAILED


def cmd_distribution(args) -> int:
    cfg = PositConfig.parse(args.format)
    dist = distribution(cfg, args.buckets)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "values.csv").write_text(values_csv(dist))
    (out / "histogram.csv").write_text(histogram_csv(dist))
    vals = [v for _, v in dist.values]
    symmetric = sorted(vals) == sorted(-v for v in vals)
    print(f"{cfg}: {dist.finite_count} finite values, max |value| = {dist.max_abs}, "
          f"symmetric = {symmetric}; wrote {out / 'values.csv'} and {out / 'histogram.csv'}")
    return 0


def _fail(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        if args.backend:
            kernels.use_backend(args.backend)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "float-ref":
            return cmd_train(args, float_ref=True)
        if args.command == "eval":
            return cmd_eval(args)
        if args.command == "verify":
            return cmd_verify(args)
        return cmd_distribution(args)
    except (C.ConfigError, DataError, CheckpointError, CliError, ValueError) as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_USAGE)
    except OSError as exc:
        return _fail(type(exc).__name__, str(exc), EXIT_USAGE)
    except KeyboardInterrupt:
        return _fail("Interrupted", "interrupted by user", 130)


if __name__ == "__main__":
    sys.exit(main())
