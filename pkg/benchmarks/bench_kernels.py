"""Compiled core vs pure-Python fallback on the hot kernels.

    python benchmarks/bench_kernels.py [--repeat 3] [--quick]

Prints one row per (kernel, format): time per element for each backend, the
speedup, and whether both backends produced identical bits.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from positnn import kernels as K
from positnn.posit import PositConfig


def _time(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def _operands(cfg, rng, shape):
    return K.from_float64(rng.normal(size=shape), cfg)


def cases(quick: bool):
    n_elem = 20_000 if quick else 200_000
    m, k, ncol = (16, 64, 16) if quick else (64, 150, 32)
    for fmt in [(8, 0), (8, 2), (12, 2), (16, 1), (32, 2)]:
        cfg = PositConfig(*fmt)
        yield f"add   {cfg}", n_elem, lambda c=cfg, n=n_elem: _binary_case(K.ADD, c, n)
        yield f"mul   {cfg}", n_elem, lambda c=cfg, n=n_elem: _binary_case(K.MUL, c, n)
        for q in (False, True):
            label = "mm+q " if q else "mm   "
            yield f"{label} {cfg}", m * k * ncol, lambda c=cfg, q=q: _matmul_case(c, q, m, k, ncol)


def _binary_case(op, cfg, n):
    rng = np.random.default_rng(0)
    a, b = _operands(cfg, rng, n), _operands(cfg, rng, n)
    return lambda: K.binary(op, a, b, cfg)


def _matmul_case(cfg, quire, m, k, ncol):
    rng = np.random.default_rng(1)
    a, b = _operands(cfg, rng, (m, k)), _operands(cfg, rng, (ncol, k))
    return lambda: K.matmul_nt(a, b, cfg, quire=quire)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = ap.parse_args(argv)
    if "compiled" not in K.backends():
        print("compiled extension not available; nothing to compare")
        return 1
    print(f"{'kernel':22s} {'compiled ns/el':>15s} {'python ns/el':>13s} {'speedup':>8s}  same bits")
    for name, count, make in cases(args.quick):
        results = {}
        for backend in ("compiled", "python"):
            K.use_backend(backend)
            fn = make()
            results[backend] = _time(fn, args.repeat if backend == "compiled" else 1)
        K.use_backend("compiled")
        (tc, oc), (tp, op_) = results["compiled"], results["python"]
        same = np.array_equal(oc, op_)
        print(f"{name:22s} {1e9 * tc / count:15.1f} {1e9 * tp / count:13.1f} {tp / tc:8.1f}  {same}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
