"""Reference solvers: closed-form precoders, random phases, exhaustive search.

The exhaustive oracle enumerates every discrete phase vector (all B^N of
them) under a fixed precoder rule, so it is the ground truth for tiny
instances; an explicit budget guard refuses anything beyond N*b = 20 bits
of search space. Ties break toward the lowest configuration index, where
index = sum_n digit_n B^(N-1-n).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelSample
from .config import SystemConfig
from .errors import BudgetError, ConfigError, DegenerateInputError
from .linkmath import effective_channel, sinr, wsr

ORACLE_BIT_BUDGET = 20


def mrt_precoder(eff, pt: float) -> np.ndarray:
    """Matched-filter columns w_k = e_k^H, jointly scaled to ||W||_F = sqrt(Pt).

    Rate-optimal for K = 1; a heuristic for K > 1.
    eff: (K, M) or batched (..., K, M). Returns (..., M, K).
    """
    eff = np.asarray(eff, dtype=complex)
    W = np.swapaxes(eff.conj(), -2, -1)
    norm = np.sqrt(np.sum(W.real ** 2 + W.imag ** 2, axis=(-2, -1),
                          keepdims=True))
    if np.any(norm == 0.0):
        raise DegenerateInputError("zero effective channel")
    return np.sqrt(pt) * W / norm


def zf_precoder(eff, pt: float) -> np.ndarray:
    """Zero-forcing: pseudo-inverse directions scaled to ||W||_F = sqrt(Pt).

    Requires full row rank (K <= M); inter-user terms e_k w_n vanish.
    eff: (K, M) or batched. Returns (..., M, K).
    """
    eff = np.asarray(eff, dtype=complex)
    K, M = eff.shape[-2], eff.shape[-1]
    if K > M:
        raise ConfigError(f"zero forcing needs K <= M, got K={K}, M={M}")
    gram = eff @ np.swapaxes(eff.conj(), -2, -1)              # (..., K, K)
    cond = np.linalg.cond(gram)
    if np.any(~np.isfinite(cond)) or np.any(cond > 1e12):
        raise DegenerateInputError("rank-deficient effective channel matrix")
    W = np.swapaxes(eff.conj(), -2, -1) @ np.linalg.inv(gram)
    norm = np.sqrt(np.sum(W.real ** 2 + W.imag ** 2, axis=(-2, -1),
                          keepdims=True))
    return np.sqrt(pt) * W / norm


def _precoder(rule: str, eff, pt: float) -> np.ndarray:
    if rule == "mrt":
        return mrt_precoder(eff, pt)
    if rule == "zf":
        return zf_precoder(eff, pt)
    raise ConfigError(f"unknown precoder rule {rule!r}")


def default_rule(config: SystemConfig) -> str:
    return "mrt" if config.K == 1 else "zf"


@dataclass
class BaselineSolution:
    phi: np.ndarray
    wsr: float
    W: np.ndarray


def random_baseline(sample: ChannelSample, config: SystemConfig,
                    rng: np.random.Generator, trials: int = 100,
                    rule: str | None = None) -> BaselineSolution:
    """Best of `trials` uniformly random discrete phase vectors."""
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    rule = rule or default_rule(config)
    digits = rng.integers(0, config.B, size=(trials, config.N))
    phi = digits * config.delta_w
    return _best_of_phases(phi, sample, config, rule)


def _grid_precoder(rule: str, eff: np.ndarray, pt: float) -> np.ndarray:
    """Tolerant batched precoder for enumeration grids.

    Degenerate configurations (zero effective channel, rank-deficient ZF)
    are legal points of the search space; they get a zero / pseudo-inverse
    precoder and simply score a low WSR instead of raising.
    """
    if rule == "mrt":
        W = np.swapaxes(eff.conj(), -2, -1)
    elif rule == "zf":
        W = np.linalg.pinv(eff)
    else:
        raise ConfigError(f"unknown precoder rule {rule!r}")
    norm = np.sqrt(np.sum(W.real ** 2 + W.imag ** 2, axis=(-2, -1),
                          keepdims=True))
    safe = np.where(norm == 0.0, 1.0, norm)
    return np.sqrt(pt) * W / safe


def _score_phase_grid(phi: np.ndarray, sample: ChannelSample,
                      config: SystemConfig, rule: str):
    """WSR of every row of phi (T, N); returns (scores, precoders)."""
    theta = np.exp(1j * phi)
    eff = np.einsum("kn,tn,nm->tkm", sample.h_hat.conj(), theta,
                    sample.G_hat)
    W = _grid_precoder(rule, eff, config.pt)
    return wsr(sinr(eff, W, config.sigma2), config.q), W


def _best_of_phases(phi: np.ndarray, sample: ChannelSample,
                    config: SystemConfig, rule: str) -> BaselineSolution:
    scores, W = _score_phase_grid(phi, sample, config, rule)
    best = int(np.argmax(scores))
    return BaselineSolution(phi=phi[best], wsr=float(scores[best]),
                            W=W[best])


@dataclass
class OracleResult:
    best_phi: np.ndarray
    best_wsr: float
    evaluated_count: int
    precoder_rule: str
    best_index: int


def exhaustive_oracle(sample: ChannelSample, config: SystemConfig,
                      rule: str | None = None,
                      chunk: int = 1 << 14) -> OracleResult:
    """Enumerate all B^N discrete phase vectors; deterministic maximizer."""
    bits = config.N * config.b
    if bits > ORACLE_BIT_BUDGET:
        raise BudgetError(
            f"oracle needs 2^{bits} evaluations; budget is 2^{ORACLE_BIT_BUDGET}")
    rule = rule or default_rule(config)
    B, N = config.B, config.N
    total = B ** N
    place = B ** np.arange(N - 1, -1, -1, dtype=np.int64)

    best_wsr = -np.inf
    best_index = -1
    best_phi = None
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total), dtype=np.int64)
        digits = (idx[:, None] // place) % B
        phi = digits * config.delta_w
        scores, _ = _score_phase_grid(phi, sample, config, rule)
        local = int(np.argmax(scores))  # first max: lowest index in chunk
        if scores[local] > best_wsr:
            best_wsr = float(scores[local])
            best_index = int(idx[local])
            best_phi = phi[local].copy()
    return OracleResult(best_phi=best_phi, best_wsr=best_wsr,
                        evaluated_count=total, precoder_rule=rule,
                        best_index=best_index)


def score_phases(phi, sample: ChannelSample, config: SystemConfig,
                 rule: str) -> float:
    """WSR of a given phase vector under a precoder rule (re-scoring hook)."""
    theta = np.exp(1j * np.asarray(phi, dtype=float))
    eff = effective_channel(sample.h_hat, theta, sample.G_hat)
    W = _precoder(rule, eff, config.pt)
    return float(wsr(sinr(eff, W, config.sigma2), config.q))
