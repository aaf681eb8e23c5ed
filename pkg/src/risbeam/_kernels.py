"""Kernel backend selection for the quantizer hot loops.

Prefers the compiled extension (`risbeam._quant_cy`) and falls back to the
numpy implementation when the extension is missing or when the
RISBEAM_PURE_PYTHON environment variable is set to a non-empty value.
Both backends share one contract: flat float64 arrays in, flat arrays out;
this module restores shapes.
"""

from __future__ import annotations

import os

import numpy as np

from . import _quant_np

if os.environ.get("RISBEAM_PURE_PYTHON"):
    _impl = _quant_np
else:
    try:
        from . import _quant_cy as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _quant_np


def backend_name() -> str:
    return "cython" if _impl.__name__.endswith("_quant_cy") else "numpy"


def _flat(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float64).ravel()


def soft_forward(x, a: float, c: float, rho) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = _impl.soft_forward(_flat(x), a, c, _flat(rho))
    return out.reshape(x.shape)


def soft_backward(x, gout, a: float, c: float, rho):
    """Returns (dL/dx with x's shape, dL/drho of shape (B-1,))."""
    x = np.asarray(x, dtype=np.float64)
    gx, grho = _impl.soft_backward(_flat(x), _flat(gout), a, c, _flat(rho))
    return gx.reshape(x.shape), grho


def penalty_forward(x, a: float, c: float, rho) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = _impl.penalty_forward(_flat(x), a, c, _flat(rho))
    return out.reshape(x.shape)


def penalty_backward(x, gout, a: float, c: float, rho):
    x = np.asarray(x, dtype=np.float64)
    gx, grho = _impl.penalty_backward(_flat(x), _flat(gout), a, c, _flat(rho))
    return gx.reshape(x.shape), grho


def hard_forward(x, rho_sorted, levels) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = _impl.hard_forward(_flat(x), _flat(rho_sorted), _flat(levels))
    return out.reshape(x.shape)
