"""Verification suites behind ``positnn verify``.

Each suite returns a :class:`Report`; ``ok`` is false on any mismatch.
"""
from __future__ import annotations

import tempfile
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .. import kernels as K
from .. import posit as P
from ..nn import (AvgPool2d, BatchNorm, Conv2d, CrossEntropy, Dropout, Flatten, Linear, MaxPool2d,
                  MSELoss, ReLU, Sigmoid, StagePrecisions, Tanh)
from ..posit import PositConfig
from ..quire import fused_dot
from ..tensor import FLOAT64

SUITES = ("scalar-exhaustive", "quire", "gradcheck", "determinism")


@dataclass
class Report:
    suite: str
    ok: bool = True
    lines: list = field(default_factory=list)

    def add(self, name: str, ok: bool, detail: str = "") -> None:
        self.ok &= ok
        self.lines.append(f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else ""))

    def text(self) -> str:
        head = f"[{self.suite}] {'PASS' if self.ok else 'FAIL'}"
        return "\n".join([head] + ["  " + s for s in self.lines])


# ---------------------------------------------------------------------------

_RATIONAL_OPS = {
    K.ADD: lambda x, y: x + y,
    K.SUB: lambda x, y: x - y,
    K.MUL: lambda x, y: x * y,
    K.DIV: lambda x, y: x / y,
}
_OP_NAMES = {K.ADD: "add", K.SUB: "sub", K.MUL: "mul", K.DIV: "div"}


def rational_op(op: int, a: int, b: int, cfg: PositConfig) -> int:
    """Exact rational result rounded once (NaR rules applied first)."""
    va = P.PositValue(cfg, a).value()
    vb = P.PositValue(cfg, b).value()
    if va is None or vb is None or (op == K.DIV and vb == 0):
        return cfg.nar_bits
    return P.encode_round(_RATIONAL_OPS[op](va, vb), cfg).bits


def scalar_exhaustive(formats=((8, 0), (8, 1), (8, 2))) -> Report:
    rep = Report("scalar-exhaustive")
    for n, es in formats:
        cfg = PositConfig(n, es)
        size = 1 << n
        a = np.repeat(np.arange(size, dtype=np.uint64), size)
        b = np.tile(np.arange(size, dtype=np.uint64), size)
        vals = [P.PositValue(cfg, i).value() for i in range(size)]
        for op in (K.ADD, K.SUB, K.MUL, K.DIV):
            got = K.binary(op, a, b, cfg)
            fn = _RATIONAL_OPS[op]
            want = np.empty(size * size, dtype=np.uint64)
            for i, va in enumerate(vals):
                for j, vb in enumerate(vals):
                    if va is None or vb is None or (op == K.DIV and vb == 0):
                        r = cfg.nar_bits
                    else:
                        r = P.encode_round(fn(va, vb), cfg).bits
                    want[i * size + j] = r
            bad = int(np.count_nonzero(got != want))
            rep.add(f"{cfg} {_OP_NAMES[op]}", bad == 0, f"{bad} mismatches of {size * size}")
    return rep


# ---------------------------------------------------------------------------

def _units_table(cfg: PositConfig) -> list:
    """Exact value of every pattern in units of minpos (None for NaR)."""
    out = []
    for bits in range(1 << cfg.nbits):
        v = P.PositValue(cfg, bits).value()
        out.append(None if v is None else int(v * (1 << cfg.max_scale)))
    return out


def _oracle_dot(a, b, cfg: PositConfig, units) -> int:
    total = 0
    for x, y in zip(a.tolist(), b.tolist()):
        ux, uy = units[x], units[y]
        if ux is None or uy is None:
            return cfg.nar_bits
        total += ux * uy
    return P.encode_round(Fraction(total, 1 << (2 * cfg.max_scale)), cfg).bits


def quire_suite(trials: int = 10_000, shuffles: int = 100, seed: int = 0) -> Report:
    rep = Report("quire")
    rng = np.random.default_rng(seed)
    for (n, es), max_len in (((8, 0), 127), ((8, 2), 500)):
        cfg = PositConfig(n, es)
        units = _units_table(cfg)
        finite = np.array([i for i in range(1 << n) if i != cfg.nar_bits], dtype=np.uint64)
        bad = 0
        for t in range(trials):
            length = int(rng.integers(1, max_len + 1))
            a = rng.choice(finite, length)
            b = rng.choice(finite, length)
            want = _oracle_dot(a, b, cfg, units)
            got = int(K.matmul_nt(a[None, :], b[None, :], cfg, quire=True)[0, 0])
            if got != want:
                bad += 1
            elif t < 50 and fused_dot([P.PositValue(cfg, int(x)) for x in a],
                                      [P.PositValue(cfg, int(y)) for y in b]).bits != want:
                bad += 1
        rep.add(f"{cfg} {trials} dots (len <= {max_len})", bad == 0, f"{bad} mismatches")
        a = rng.choice(finite, max_len)
        b = rng.choice(finite, max_len)
        ref = int(K.matmul_nt(a[None, :], b[None, :], cfg, quire=True)[0, 0])
        perms = [rng.permutation(max_len) for _ in range(shuffles)]
        A = np.stack([a[p] for p in perms])
        B = np.stack([b[p] for p in perms])
        outs = np.array([int(K.matmul_nt(A[i:i + 1], B[i:i + 1], cfg, quire=True)[0, 0])
                         for i in range(shuffles)])
        rep.add(f"{cfg} order independence ({shuffles} shuffles)", bool(np.all(outs == ref)))
    return rep


# ---------------------------------------------------------------------------
# Finite-difference gradient checks in float64.

def _float_prec() -> StagePrecisions:
    return StagePrecisions.uniform(FLOAT64)


def _layer_cases():
    """(name, factory, input shape) for every layer type."""
    return [
        ("linear", lambda: Linear(5, 3), (4, 5)),
        ("conv", lambda: Conv2d(2, 3, 3, padding=1), (2, 2, 5, 5)),
        ("conv-stride", lambda: Conv2d(2, 2, 3, stride=2, padding=1), (1, 2, 6, 6)),
        ("maxpool", lambda: MaxPool2d(2), (2, 2, 4, 4)),
        ("avgpool", lambda: AvgPool2d(2), (2, 2, 4, 4)),
        ("relu", lambda: ReLU(), (3, 7)),
        ("sigmoid", lambda: Sigmoid(), (3, 7)),
        ("tanh", lambda: Tanh(), (3, 7)),
        ("dropout", lambda: Dropout(0.3, seed=5), (3, 7)),
        ("batchnorm", lambda: BatchNorm(3), (4, 3, 2, 2)),
        ("flatten", lambda: Flatten(), (2, 2, 3, 3)),
    ]


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Largest error relative to the largest numeric entry of the tensor."""
    scale = max(float(np.max(np.abs(numeric))), 1e-8)
    return float(np.max(np.abs(analytic - numeric))) / scale


def gradcheck_layer(factory, shape, seed: int, h: float = 1e-5) -> float:
    """Max relative error of dx and every parameter gradient vs central differences."""
    rng = np.random.default_rng(seed)
    layer = factory()
    layer.bind(_float_prec())
    if hasattr(layer, "init_params"):
        layer.init_params(rng, "")
    x = rng.uniform(-1, 1, shape)
    probe = None

    def run(inp):
        nonlocal probe
        if isinstance(layer, Dropout):
            layer.rng = np.random.default_rng(seed)
        y = layer.forward(inp)
        if probe is None:
            probe = np.random.default_rng(seed + 1).normal(size=y.shape)
        return float(np.sum(probe * y))

    run(x)
    dx = layer.backward(probe.copy())
    errs = []
    num = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + h
        fp = run(x)
        x[i] = old - h
        fm = run(x)
        x[i] = old
        num[i] = (fp - fm) / (2 * h)
    errs.append(_rel_err(dx, num))
    for _, p in layer.params():
        run(x)
        layer.backward(probe.copy())
        grad = p.grad.copy()
        w = p.master.copy()
        numw = np.zeros_like(w)
        for i in np.ndindex(w.shape):
            wp, wm = w.copy(), w.copy()
            wp[i] += h
            wm[i] -= h
            p.set_master(wp)
            fp = run(x)
            p.set_master(wm)
            fm = run(x)
            numw[i] = (fp - fm) / (2 * h)
        p.set_master(w)
        errs.append(_rel_err(grad, numw))
    return max(errs)


def gradcheck_loss(name: str, seed: int, h: float = 1e-5) -> float:
    rng = np.random.default_rng(seed)
    prec = _float_prec()
    y = rng.normal(size=(4, 6))
    if name == "cross_entropy":
        loss = CrossEntropy(prec)
        t = rng.integers(0, 6, 4)
    else:
        loss = MSELoss(prec)
        t = rng.normal(size=y.shape)
    f = lambda v: float(loss.forward(v, t))  # noqa: E731
    f(y)
    g = loss.backward()
    num = np.zeros_like(y)
    for i in np.ndindex(y.shape):
        old = y[i]
        y[i] = old + h
        fp = f(y)
        y[i] = old - h
        fm = f(y)
        y[i] = old
        num[i] = (fp - fm) / (2 * h)
    return _rel_err(g, num)


def gradcheck_suite(seeds: int = 100, tol: float = 1e-4) -> Report:
    rep = Report("gradcheck")
    for name, factory, shape in _layer_cases():
        worst = max(gradcheck_layer(factory, shape, s) for s in range(seeds))
        rep.add(name, worst < tol, f"max rel err {worst:.2e} over {seeds} seeds")
    for name in ("cross_entropy", "mse"):
        worst = max(gradcheck_loss(name, s) for s in range(seeds))
        rep.add(name, worst < tol, f"max rel err {worst:.2e} over {seeds} seeds")
    return rep


# ---------------------------------------------------------------------------

def determinism_suite(cfg=None, workers=(1, 2, 4)) -> Report:
    """Train the same run with several worker counts and compare output bytes."""
    from .config import get_preset
    from .train import train

    rep = Report("determinism")
    if cfg is None:
        cfg = replace(get_preset("O12L10"), dataset="synthetic", subset=512, test_subset=128,
                      epochs=1)
    cfg = replace(cfg, timing=False)
    outputs = {}
    with tempfile.TemporaryDirectory() as tmp:
        for w in workers:
            out = Path(tmp) / f"w{w}"
            res = train(replace(cfg, workers=w, out=str(out)))
            outputs[w] = (res.checkpoint.read_bytes(), res.metrics.read_bytes())
    base = outputs[workers[0]]
    for w in workers[1:]:
        rep.add(f"workers={w} checkpoint == workers={workers[0]}", outputs[w][0] == base[0])
        rep.add(f"workers={w} metrics.csv == workers={workers[0]}", outputs[w][1] == base[1])
    return rep


def run_suite(name: str, **kw) -> Report:
    if name == "scalar-exhaustive":
        return scalar_exhaustive()
    if name == "quire":
        return quire_suite(**kw)
    if name == "gradcheck":
        return gradcheck_suite(**kw)
    if name == "determinism":
        return determinism_suite(**kw)
    raise ValueError(f"unknown suite {name!r}; choose from {', '.join(SUITES)}")
