"""Soft-to-hard phase quantization.

The training-time quantizer is a differentiable sum of shifted hyperbolic
tangents with amplitude a = pi / 2^b per term, shared steepness c and
B - 1 trainable decision boundaries rho. At prediction time a staircase
replaces it: inputs below the lowest boundary map to 0, inputs above the
highest map to the full scale 2 a (B - 1), and interior regions map to the
soft quantizer evaluated at the region's boundary midpoint. With well
separated boundaries and large c those outputs coincide with the uniform
phase grid {0, 2pi/B, ..., (B-1) 2pi/B}.

Boundaries are re-sorted on use; exact boundary hits belong to the upper
region (half-open decision intervals).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConfigError


def uniform_boundaries(b: int) -> np.ndarray:
    """Decision boundaries of the ideal uniform quantizer: (2i-1) pi / B."""
    B = 2 ** b
    return np.array([(2 * i - 1) * math.pi / B for i in range(1, B)])


@dataclass
class QuantizerParams:
    """Parameter set of the soft/hard quantizer pair.

    a is pinned to pi / 2^b; rho holds B - 1 boundaries (trainable during
    network optimization, stored here unsorted).
    """

    b: int
    c: float = 1.0
    rho: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.b < 1:
            raise ConfigError(f"b must be >= 1, got {self.b}")
        if self.c <= 0:
            raise ConfigError(f"steepness c must be positive, got {self.c}")
        if self.rho is None:
            self.rho = uniform_boundaries(self.b)
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if self.rho.shape != (self.B - 1,):
            raise ConfigError(
                f"need {self.B - 1} boundaries for b={self.b}, "
                f"got shape {self.rho.shape}")

    @property
    def B(self) -> int:
        return 2 ** self.b

    @property
    def a(self) -> float:
        return math.pi / (2 ** self.b)

    @property
    def full_scale(self) -> float:
        """Upper saturation value 2 a (B - 1)."""
        return 2.0 * self.a * (self.B - 1)

    def sorted_rho(self) -> np.ndarray:
        return np.sort(self.rho)

    def copy(self) -> "QuantizerParams":
        return QuantizerParams(b=self.b, c=self.c, rho=self.rho.copy())


def soft_quantize(x, params: QuantizerParams) -> np.ndarray:
    """Q_A(x); strictly increasing, range (0, 2 a (B - 1))."""
    return _kernels.soft_forward(x, params.a, params.c, params.rho)


def soft_quantize_grad(x, params: QuantizerParams):
    """Per-element derivatives of Q_A.

    Returns (dQ/dx with x's shape, dQ/drho with shape x.shape + (B-1,)).
    Both decay to 0 as |c (x - rho_i)| grows; neither can overflow.
    """
    x = np.asarray(x, dtype=np.float64)
    u = params.c * (x[..., None] - params.rho)
    per_term = params.a * params.c * _sech2(u)
    return per_term.sum(axis=-1), -per_term


def _sech2(u):
    e = np.exp(-2.0 * np.abs(u))
    return 4.0 * e / (1.0 + e) ** 2


def hard_levels(params: QuantizerParams) -> tuple[np.ndarray, np.ndarray]:
    """Sorted boundaries and the B output levels of the staircase."""
    rho = params.sorted_rho()
    levels = np.empty(params.B)
    levels[0] = 0.0
    if params.B > 2:
        mids = 0.5 * (rho[:-1] + rho[1:])
        levels[1:-1] = _kernels.soft_forward(mids, params.a, params.c, rho)
    levels[-1] = params.full_scale
    return rho, levels


def hard_quantize(x, params: QuantizerParams) -> np.ndarray:
    """Q_R(x): the prediction-time staircase with B output levels."""
    rho, levels = hard_levels(params)
    return _kernels.hard_forward(x, rho, levels)


def penalty(x, params: QuantizerParams) -> np.ndarray:
    """Per-element boundary-proximity penalty (tanh-clamped gradient of Q_A).

    Maximal (a c per term) when x sits on a boundary, minimal when x is far
    from all of them; bounded in [(B-1) 4 a c / (e + 1/e)^2, (B-1) a c].
    """
    return _kernels.penalty_forward(x, params.a, params.c, params.rho)


def penalty_grad(x, params: QuantizerParams):
    """Per-element derivatives of the penalty w.r.t. x and rho."""
    x = np.asarray(x, dtype=np.float64)
    u = params.c * (x[..., None] - params.rho)
    t = np.tanh(u)
    d = -2.0 * params.a * params.c ** 2 * np.tanh(t) * _sech2(t) * _sech2(u)
    return d.sum(axis=-1), -d


def gap(wsr_t: float, wsr_p: float) -> float:
    """Relative loss from swapping the soft quantizer for the hard one."""
    if wsr_t <= 0:
        raise ConfigError(f"training WSR must be positive, got {wsr_t}")
    return (wsr_t - wsr_p) / wsr_t
