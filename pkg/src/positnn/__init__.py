"""Posit arithmetic, quires and low-precision neural-network training.

Submodules: :mod:`positnn.posit` (scalar reference), :mod:`positnn.quire`,
:mod:`positnn.kernels` (compiled core with a pure-Python fallback),
:mod:`positnn.tensor`, :mod:`positnn.nn`, :mod:`positnn.data` and
:mod:`positnn.harness`.
"""
from .posit import PositConfig, PositValue, encode_round
from .quire import Quire, fused_dot
from .tensor import FLOAT32, FLOAT64, Tensor, parse_kind

__version__ = "0.1.0"

__all__ = ["FLOAT32", "FLOAT64", "PositConfig", "PositValue", "Quire", "Tensor", "encode_round",
           "fused_dot", "parse_kind", "__version__"]
