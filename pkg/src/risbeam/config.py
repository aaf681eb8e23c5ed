"""Scenario and training configuration.

Powers are configured in dBm and exposed in linear watts; distances in m,
angles in radians. Defaults follow the simulated downlink scenario: a
4-antenna AP at the origin, the RIS at (50, 0), users in a 2 m circle
around (50, 10), Rician factor 10 and path-loss exponent 2.2 on both hops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

from .errors import ConfigError


def dbm_to_watt(p_dbm: float) -> float:
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def watt_to_dbm(p_watt: float) -> float:
    if p_watt <= 0:
        raise ConfigError(f"power must be positive, got {p_watt}")
    return 10.0 * math.log10(p_watt) + 30.0


@dataclass(frozen=True)
class SystemConfig:
    """All scenario constants for one simulated system.

    M/N/K: AP antennas, RIS elements, users. b: control bits per RIS
    element (B = 2^b discrete phase levels). q: per-user priority weights.
    kappa_g / kappa_r: Rician factors of the AP-RIS and RIS-user links.
    nx: RIS columns (horizontal); N must be divisible by nx.
    """

    M: int = 4
    N: int = 16
    K: int = 2
    b: int = 1
    pt_dbm: float = 5.0
    noise_dbm: float = -80.0
    q: tuple[float, ...] = ()
    beta0_db: float = -35.6
    d0: float = 1.0
    path_exp: float = 2.2
    kappa_g: float = 10.0
    kappa_r: float = 10.0
    ap_pos: tuple[float, float] = (0.0, 0.0)
    ris_pos: tuple[float, float] = (50.0, 0.0)
    user_center: tuple[float, float] = (50.0, 10.0)
    user_radius: float = 2.0
    nx: int = 0

    def __post_init__(self):
        if min(self.M, self.N, self.K) < 1:
            raise ConfigError("M, N and K must all be >= 1")
        if self.b < 1:
            raise ConfigError(f"b must be >= 1, got {self.b}")
        if self.kappa_g < 0 or self.kappa_r < 0:
            raise ConfigError("Rician factors must be >= 0")
        if self.d0 <= 0:
            raise ConfigError("reference distance d0 must be positive")
        if self.user_radius < 0:
            raise ConfigError("user_radius must be >= 0")
        if not self.q:
            object.__setattr__(self, "q", (1.0,) * self.K)
        if len(self.q) != self.K:
            raise ConfigError(f"need {self.K} user weights, got {len(self.q)}")
        if any(w <= 0 for w in self.q):
            raise ConfigError("user weights must be positive")
        if self.nx == 0:
            object.__setattr__(self, "nx", _near_square_columns(self.N))
        if self.N % self.nx != 0:
            raise ConfigError(f"N={self.N} not divisible by nx={self.nx}")

    @property
    def B(self) -> int:
        return 2 ** self.b

    @property
    def delta_w(self) -> float:
        """Phase step of the discrete set S = {0, delta_w, ..., (B-1) delta_w}."""
        return 2.0 * math.pi / self.B

    @property
    def pt(self) -> float:
        """Transmit power budget in watts."""
        return dbm_to_watt(self.pt_dbm)

    @property
    def sigma2(self) -> float:
        """Receiver noise power in watts."""
        return dbm_to_watt(self.noise_dbm)

    @property
    def ny(self) -> int:
        return self.N // self.nx

    def to_dict(self) -> dict:
        d = asdict(self)
        d["q"] = list(self.q)
        for key in ("ap_pos", "ris_pos", "user_center"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        d = dict(d)
        d["q"] = tuple(d.get("q", ()))
        for key in ("ap_pos", "ris_pos", "user_center"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def _near_square_columns(n: int) -> int:
    """Largest divisor of n not exceeding sqrt(n)."""
    best = 1
    for cand in range(1, int(math.isqrt(n)) + 1):
        if n % cand == 0:
            best = cand
    return best


@dataclass(frozen=True)
class TrainConfig:
    """Training-loop hyperparameters.

    Desk-scale defaults (batch 256, patience 25, max 300 epochs) are a
    scaled-down version of the full protocol (batch 1024, patience 50,
    1500 epochs) which remains reachable through these fields. loss_kind
    selects the objective: 'perfect', 'penalized', 'averaged', or
    'averaged+penalized'.
    """

    batch_size: int = 256
    max_epochs: int = 300
    patience: int = 25
    lr: float = 1e-3
    plateau_factor: float = 0.8
    plateau_patience: int = 10
    lr_floor: float = 5e-5
    tau: float = 0.005
    error_draws: int = 10
    loss_kind: str = "perfect"
    penalty_weight: float = 0.0
    steepness: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (batch-norm statistics)")
        if self.error_draws < 1:
            raise ConfigError("error_draws must be >= 1")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.penalty_weight < 0:
            raise ConfigError("penalty_weight must be >= 0")
        if self.steepness <= 0:
            raise ConfigError("steepness must be positive")
        if self.loss_kind not in ("perfect", "penalized", "averaged",
                                  "averaged+penalized"):
            raise ConfigError(f"unknown loss_kind {self.loss_kind!r}")
        if self.max_epochs < 1 or self.patience < 1 or self.plateau_patience < 1:
            raise ConfigError("epoch/patience settings must be >= 1")
        if not (0 < self.plateau_factor < 1):
            raise ConfigError("plateau_factor must lie in (0, 1)")
        if self.lr <= 0 or self.lr_floor <= 0 or self.lr_floor > self.lr:
            raise ConfigError("need 0 < lr_floor <= lr")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)
