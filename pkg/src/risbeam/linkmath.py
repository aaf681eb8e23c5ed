"""Deterministic physical-layer math.

Conventions: h rows are the RIS-user channel vectors h_{r,k} (the Hermitian
transpose happens inside effective_channel), G is the (N, M) AP-RIS matrix,
W is the (M, K) precoder with one column per user. Data symbols have unit
variance, so they never appear: rates follow analytically from the SINR.
Everything is double-precision complex and batch-friendly (leading axes
broadcast).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateInputError


def phases_to_theta(phi) -> np.ndarray:
    """Unit-modulus reflection coefficients e^{j phi} = cos phi + j sin phi."""
    phi = np.asarray(phi, dtype=np.float64)
    return np.cos(phi) + 1j * np.sin(phi)


def normalize_precoder(w_raw, pt: float) -> np.ndarray:
    """Scale to the power budget: sqrt(Pt) W / ||W||_F (per batch entry)."""
    w_raw = np.asarray(w_raw, dtype=complex)
    if pt <= 0:
        raise ConfigError(f"Pt must be positive, got {pt}")
    norm = np.sqrt(np.sum(w_raw.real ** 2 + w_raw.imag ** 2, axis=(-2, -1),
                          keepdims=True))
    if np.any(norm == 0.0):
        raise DegenerateInputError("all-zero precoder has no direction")
    return np.sqrt(pt) * w_raw / norm


def effective_channel(h, theta, G) -> np.ndarray:
    """Cascaded rows e_k = h_k^H diag(theta) G.

    h: (..., K, N) or (N,); theta: (..., N); G: (..., N, M).
    Returns (..., K, M) (or (M,) for a single vector h).
    """
    h = np.asarray(h, dtype=complex)
    theta = np.asarray(theta, dtype=complex)
    G = np.asarray(G, dtype=complex)
    single = h.ndim == 1
    if single:
        h = h[None, :]
    if h.shape[-1] != G.shape[-2] or theta.shape[-1] != G.shape[-2]:
        raise ConfigError(
            f"dimension mismatch: h {h.shape}, theta {theta.shape}, G {G.shape}")
    eff = np.einsum("...kn,...n,...nm->...km", h.conj(), theta, G)
    return eff[..., 0, :] if single else eff


def sinr(eff, W, sigma2: float) -> np.ndarray:
    """Per-user SINR from effective rows and precoder columns.

    eff: (..., K, M); W: (..., M, K). gamma_k = |e_k w_k|^2 /
    (sum_{n != k} |e_k w_n|^2 + sigma2).
    """
    if sigma2 <= 0:
        raise ConfigError(f"sigma2 must be positive, got {sigma2}")
    eff = np.asarray(eff, dtype=complex)
    W = np.asarray(W, dtype=complex)
    if eff.shape[-1] != W.shape[-2] or eff.shape[-2] != W.shape[-1]:
        raise ConfigError(f"dimension mismatch: eff {eff.shape}, W {W.shape}")
    s = eff @ W                       # (..., K, K), s[k, n] = e_k w_n
    p = s.real ** 2 + s.imag ** 2
    desired = np.diagonal(p, axis1=-2, axis2=-1)
    interference = p.sum(axis=-1) - desired
    return desired / (interference + sigma2)


def wsr(gamma, q) -> np.ndarray:
    """Weighted sum-rate sum_k q_k log2(1 + gamma_k) over the last axis."""
    gamma = np.asarray(gamma, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    return np.log2(1.0 + gamma) @ q


@dataclass
class RateReport:
    gamma: np.ndarray           # (K,) linear SINRs
    rates: np.ndarray           # (K,) bps/Hz
    wsr: float                  # weighted sum-rate, bps/Hz


def rate_report(h, theta, G, W, sigma2: float, q) -> RateReport:
    """Full per-user report for one sample; h may be (N,) when K = 1."""
    h = np.atleast_2d(np.asarray(h, dtype=complex))
    gamma = sinr(effective_channel(h, theta, G), W, sigma2)
    rates = np.log2(1.0 + gamma)
    return RateReport(gamma=gamma, rates=rates, wsr=float(rates @ np.asarray(q)))
