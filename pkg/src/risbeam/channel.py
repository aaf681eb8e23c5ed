"""Channel generation: geometry, path loss, Rician fading, CSI errors.

Estimates come first: the Rician model produces the estimated channels
(G_hat, h_hat) that feed the network, and true channels are synthesized on
demand as estimate plus a circularly symmetric Gaussian error whose
per-entry variance is eta times the mean squared magnitude of the
corresponding estimated matrix/vector. MMSE estimation makes error and
estimate uncorrelated, which is what licenses building the pair in this
order.

Line-of-sight components are rank-one products of array responses:
a half-wavelength uniform linear array at the AP (along the x axis) and a
half-wavelength uniform rectangular array at the RIS whose vertical axis
points out of the simulated plane, so in-plane geometry only excites the
horizontal phase gradient.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .errors import ConfigError

DATASET_FORMAT_VERSION = 1


def path_loss(d: float, beta0_db: float = -35.6, d0: float = 1.0,
              p_exp: float = 2.2) -> float:
    """Linear power gain beta0 * (d / d0)^(-p_exp); beta0 given in dB."""
    if d <= 0 or d0 <= 0:
        raise ConfigError(f"distances must be positive, got d={d}, d0={d0}")
    return 10.0 ** ((beta0_db - 10.0 * p_exp * math.log10(d / d0)) / 10.0)


def ula_response(m: int, cos_angle: float) -> np.ndarray:
    """Half-wavelength ULA response e^{j pi i cos_angle}, i = 0..m-1."""
    return np.exp(1j * math.pi * cos_angle * np.arange(m))


def ura_response(nx: int, ny: int, cos_x: float, cos_z: float) -> np.ndarray:
    """Half-wavelength URA response, flattened row-major over (iy, ix)."""
    ax = np.exp(1j * math.pi * cos_x * np.arange(nx))
    az = np.exp(1j * math.pi * cos_z * np.arange(ny))
    return (az[:, None] * ax[None, :]).ravel()


def rician_channel(los: np.ndarray, kappa: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Mix a deterministic LoS term with i.i.d. CN(0,1) scattering.

    Output = sqrt(kappa/(1+kappa)) los + sqrt(1/(1+kappa)) nlos; the caller
    applies the sqrt(path loss) scale.
    """
    if kappa < 0:
        raise ConfigError(f"Rician factor must be >= 0, got {kappa}")
    los = np.asarray(los)
    nlos = (rng.standard_normal(los.shape)
            + 1j * rng.standard_normal(los.shape)) / math.sqrt(2.0)
    return (math.sqrt(kappa / (1.0 + kappa)) * los
            + math.sqrt(1.0 / (1.0 + kappa)) * nlos)


@dataclass
class ChannelSample:
    """One estimated-channel realization.

    G_hat: (N, M) AP-RIS matrix. h_hat: (K, N) RIS-user vectors (rows are
    the channel vectors, conjugation happens in the SINR math). eta is the
    normalized error MSE shared by every entry; 0 means perfect CSI.
    """

    G_hat: np.ndarray
    h_hat: np.ndarray
    eta: float
    index: int = 0
    user_pos: np.ndarray | None = None

    def __post_init__(self):
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if self.G_hat.shape[0] != self.h_hat.shape[1]:
            raise ConfigError(
                f"G_hat rows ({self.G_hat.shape[0]}) must match h_hat "
                f"columns ({self.h_hat.shape[1]})")


def _direction_cos_x(src, dst) -> tuple[float, float]:
    dx = dst[0] - src[0]
    dy = dst[1] - src[1]
    d = math.hypot(dx, dy)
    if d <= 0:
        raise ConfigError(f"coincident nodes at {tuple(src)}")
    return dx / d, d


def generate_sample(config: SystemConfig, eta: float, index: int,
                    rng: np.random.Generator) -> ChannelSample:
    """Draw one sample: user positions, LoS geometry, fading, path loss."""
    ap, ris = config.ap_pos, config.ris_pos

    # AP-RIS link
    cos_ap, d_ar = _direction_cos_x(ap, ris)
    cos_ris_ap, _ = _direction_cos_x(ris, ap)
    a_ap = ula_response(config.M, cos_ap)
    a_ris = ura_response(config.nx, config.ny, cos_ris_ap, 0.0)
    g_los = np.outer(a_ris, a_ap.conj())
    beta_ar = path_loss(d_ar, config.beta0_db, config.d0, config.path_exp)
    G_hat = math.sqrt(beta_ar) * rician_channel(g_los, config.kappa_g, rng)

    # RIS-user links; users uniform in the configured circle
    radii = config.user_radius * np.sqrt(rng.random(config.K))
    angles = 2.0 * math.pi * rng.random(config.K)
    user_pos = np.stack([
        config.user_center[0] + radii * np.cos(angles),
        config.user_center[1] + radii * np.sin(angles),
    ], axis=1)

    h_hat = np.empty((config.K, config.N), dtype=complex)
    for k in range(config.K):
        cos_u, d_ru = _direction_cos_x(ris, user_pos[k])
        h_los = ura_response(config.nx, config.ny, cos_u, 0.0)
        beta_ru = path_loss(d_ru, config.beta0_db, config.d0, config.path_exp)
        h_hat[k] = math.sqrt(beta_ru) * rician_channel(h_los, config.kappa_r, rng)

    return ChannelSample(G_hat=G_hat, h_hat=h_hat, eta=eta, index=index,
                         user_pos=user_pos)


def generate_samples(config: SystemConfig, count: int, eta: float,
                     seed: int) -> list[ChannelSample]:
    """count independent samples with per-sample counter-derived seeds."""
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    if eta < 0:
        raise ConfigError(f"eta must be >= 0, got {eta}")
    return [
        generate_sample(config, eta, i, np.random.default_rng([seed, i]))
        for i in range(count)
    ]


def true_channel_draws(G_hat: np.ndarray, h_hat: np.ndarray, eta: float,
                       j_count: int, rng: np.random.Generator):
    """j_count true-channel draws for a batch of estimates.

    G_hat: (..., N, M), h_hat: (..., K, N) with matching leading batch axes.
    Returns (G, h) with a new leading axis of length j_count. Per-entry
    error variance is eta times the mean |entry|^2 of the corresponding
    per-sample matrix (computed separately for G_hat and each h_hat row),
    matching the normalized-MSE definition in expectation.
    """
    if j_count < 1:
        raise ConfigError(f"j_count must be >= 1, got {j_count}")
    if eta == 0.0:
        G = np.broadcast_to(G_hat, (j_count,) + G_hat.shape).copy()
        h = np.broadcast_to(h_hat, (j_count,) + h_hat.shape).copy()
        return G, h

    var_g = eta * np.mean(np.abs(G_hat) ** 2, axis=(-2, -1), keepdims=True)
    var_h = eta * np.mean(np.abs(h_hat) ** 2, axis=-1, keepdims=True)

    shape_g = (j_count,) + G_hat.shape
    shape_h = (j_count,) + h_hat.shape
    err_g = (rng.standard_normal(shape_g) + 1j * rng.standard_normal(shape_g))
    err_h = (rng.standard_normal(shape_h) + 1j * rng.standard_normal(shape_h))
    G = G_hat + np.sqrt(var_g / 2.0) * err_g
    h = h_hat + np.sqrt(var_h / 2.0) * err_h
    return G, h


def draw_true_channels(sample: ChannelSample, j_count: int,
                       rng: np.random.Generator):
    """True-channel draws (G, h_k) for one sample; list of j_count pairs."""
    G, h = true_channel_draws(sample.G_hat, sample.h_hat, sample.eta,
                              j_count, rng)
    return [(G[j], h[j]) for j in range(j_count)]


# ---------------------------------------------------------------------------
# Dataset serialization: JSON-lines, one self-describing header record then
# one record per sample. Complex entries stored as [re, im] pairs at full
# double precision (repr round-trip).
# ---------------------------------------------------------------------------

def _complex_to_lists(arr: np.ndarray):
    return np.stack([arr.real, arr.imag], axis=-1).tolist()


def _lists_to_complex(lists) -> np.ndarray:
    arr = np.asarray(lists, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def _dumps(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_dataset(path: str, config: SystemConfig,
                  samples: list[ChannelSample], eta: float, seed: int) -> None:
    """Atomically write a dataset file (header record + sample records)."""
    header = {
        "format_version": DATASET_FORMAT_VERSION,
        "kind": "risbeam-dataset",
        "config": config.to_dict(),
        "count": len(samples),
        "eta": eta,
        "seed": seed,
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(_dumps(header) + "\n")
        for s in samples:
            record = {
                "index": s.index,
                "G": _complex_to_lists(s.G_hat),
                "h": _complex_to_lists(s.h_hat),
            }
            if s.user_pos is not None:
                record["user_pos"] = np.asarray(s.user_pos).tolist()
            fh.write(_dumps(record) + "\n")
    os.replace(tmp, path)


def read_dataset(path: str):
    """Read a dataset file; returns (config, eta, seed, samples)."""
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "risbeam-dataset":
            raise ConfigError(f"{path} is not a risbeam dataset")
        if header["format_version"] != DATASET_FORMAT_VERSION:
            raise ConfigError(
                f"unsupported dataset format version {header['format_version']}")
        config = SystemConfig.from_dict(header["config"])
        eta = float(header["eta"])
        samples = []
        for line in fh:
            rec = json.loads(line)
            user_pos = (np.asarray(rec["user_pos"])
                        if "user_pos" in rec else None)
            samples.append(ChannelSample(
                G_hat=_lists_to_complex(rec["G"]),
                h_hat=_lists_to_complex(rec["h"]),
                eta=eta, index=rec["index"], user_pos=user_pos))
    if len(samples) != header["count"]:
        raise ConfigError(
            f"{path}: header promises {header['count']} samples, "
            f"found {len(samples)}")
    return config, eta, header["seed"], samples


def generate_dataset(path: str, config: SystemConfig, count: int, eta: float,
                     seed: int) -> list[ChannelSample]:
    """Generate and write a dataset; returns the samples."""
    samples = generate_samples(config, count, eta, seed)
    write_dataset(path, config, samples, eta, seed)
    return samples
