"""Losses, optimizer loop, and the two training procedures.

The loss head maps network outputs to the scalar objective:
raw precoder reals -> power normalization, continuous phases -> soft
quantizer -> unit-modulus coefficients -> per-user SINR -> negative
weighted sum-rate, optionally plus the boundary penalty and optionally
averaged over true-channel draws for imperfect CSI. Its backward pass is
derived by hand (complex intermediates carry the gradient
dL/dRe + j dL/dIm, which propagates through products as g_u = g_z conj(v)).

Training uses adaptive moment estimation under the published schedule:
reduce the learning rate by the plateau factor when validation loss stalls,
floor it, and stop early on the patience budget. Draws, shuffles and
initialization all derive from the config seed, so histories are
reproducible run to run.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from . import quantizer as qz
from .channel import ChannelSample, true_channel_draws
from .config import SystemConfig, TrainConfig
from .errors import ConfigError, DegenerateInputError
from .network import (NetworkParams, backward, forward, init_params,
                      split_outputs)

LOG2 = math.log(2.0)

HISTORY_COLUMNS = ("epoch", "lr", "train_loss", "val_wsr_soft",
                   "val_wsr_hard", "mean_f_cons", "gap")


# ---------------------------------------------------------------------------
# Input assembly and scoring helpers
# ---------------------------------------------------------------------------

def stack_inputs(samples: list[ChannelSample]) -> np.ndarray:
    """(L, 2NM + 2NK) matrix: Re(G), Im(G), Re(h), Im(h) per sample."""
    rows = []
    for s in samples:
        rows.append(np.concatenate([
            s.G_hat.real.ravel(), s.G_hat.imag.ravel(),
            s.h_hat.real.ravel(), s.h_hat.imag.ravel()]))
    return np.asarray(rows)


def stack_channels(samples: list[ChannelSample]):
    """(L, N, M) and (L, K, N) arrays of the estimated channels."""
    G = np.stack([s.G_hat for s in samples])
    h = np.stack([s.h_hat for s in samples])
    return G, h


def _score_gamma(theta, W, G, h, sigma2):
    """Per-user SINRs, (J, L, K); theta (L, N), W (L, M, K) shared over J."""
    eff = np.einsum("jlkn,ln,jlnm->jlkm", h.conj(), theta, G)
    s = np.einsum("jlkm,lmn->jlkn", eff, W)
    p = s.real ** 2 + s.imag ** 2
    desired = np.diagonal(p, axis1=-2, axis2=-1)
    denom = p.sum(axis=-1) - desired + sigma2
    return desired / denom


# ---------------------------------------------------------------------------
# Loss functions (scoring form)
# ---------------------------------------------------------------------------

def loss_perfect(gamma, q) -> float:
    """Negative batch WSR: -sum_l sum_k q_k log2(1 + gamma_{k,l})."""
    gamma = np.asarray(gamma, dtype=np.float64)
    return float(-(np.log2(1.0 + gamma) @ np.asarray(q)).sum())


def sample_penalty(phi_cont, quant: qz.QuantizerParams) -> np.ndarray:
    """Per-sample f_cons: boundary penalty summed over the N phases."""
    return qz.penalty(phi_cont, quant).sum(axis=-1)


def loss_penalized(gamma, phi_cont, q, lam: float,
                   quant: qz.QuantizerParams) -> float:
    if lam < 0:
        raise ConfigError(f"penalty weight must be >= 0, got {lam}")
    return loss_perfect(gamma, q) + lam * float(sample_penalty(phi_cont, quant).sum())


def loss_averaged(theta, W, G_draws, h_draws, q, sigma2, kind: str = "perfect",
                  phi_cont=None, lam: float = 0.0,
                  quant: qz.QuantizerParams | None = None) -> float:
    """Sum over draws of the inner loss, network outputs held fixed.

    G_draws: (J, L, N, M); h_draws: (J, L, K, N). The penalty term does not
    depend on the draw, so the penalized variant accumulates it once per
    draw as well (J identical contributions).
    """
    gamma = _score_gamma(theta, W, G_draws, h_draws, sigma2)
    total = loss_perfect(gamma, q)
    if kind == "penalized":
        J = G_draws.shape[0]
        total += J * lam * float(sample_penalty(phi_cont, quant).sum())
    elif kind != "perfect":
        raise ConfigError(f"unknown inner loss kind {kind!r}")
    return total


def compute_lambda(wsr_c: float, f_cons_c: float) -> float:
    """Penalty-weight heuristic 0.1 WSR_c / f_cons,c."""
    if f_cons_c <= 0:
        raise ConfigError(f"f_cons_c must be positive, got {f_cons_c}")
    return 0.1 * wsr_c / f_cons_c


# ---------------------------------------------------------------------------
# Differentiable loss head
# ---------------------------------------------------------------------------

def head_loss_and_grads(phi_cont, w_reals, params: NetworkParams,
                        quant: qz.QuantizerParams, config: SystemConfig,
                        G, h, lam: float = 0.0, pen_scale: float = 1.0,
                        want_grad: bool = True):
    """Loss and gradients w.r.t. (phi_cont, w_reals, rho).

    G: (J, L, N, M) and h: (J, L, K, N) channel draws (J = 1 for the
    perfect-CSI loss). Returns (loss, g_phi, g_w_reals, g_rho, stats);
    the gradient triple is None when want_grad is False.
    """
    q = np.asarray(config.q)
    sigma2 = config.sigma2
    a, c, rho = quant.a, quant.c, quant.rho
    L = phi_cont.shape[0]
    J = G.shape[0]

    V = split_outputs(params, w_reals)                       # (L, M, K)
    r2 = np.sum(V.real ** 2 + V.imag ** 2, axis=(1, 2))
    if np.any(r2 == 0.0):
        raise DegenerateInputError("all-zero precoder output")
    r = np.sqrt(r2)
    alpha = math.sqrt(config.pt) / r                         # (L,)
    W = alpha[:, None, None] * V

    phi_q = _kernels.soft_forward(phi_cont, a, c, rho)
    theta = np.cos(phi_q) + 1j * np.sin(phi_q)

    T = h.conj()[..., None] * G[:, :, None, :, :]            # (J, L, K, N, M)
    eff = np.einsum("ln,jlknm->jlkm", theta, T)
    s = np.einsum("jlkm,lmn->jlkn", eff, W)
    p = s.real ** 2 + s.imag ** 2
    desired = np.diagonal(p, axis1=-2, axis2=-1)             # (J, L, K)
    denom = p.sum(axis=-1) - desired + sigma2
    gamma = desired / denom
    rates = np.log2(1.0 + gamma)
    loss = float(-(rates @ q).sum())
    stats = {"mean_wsr": float((rates @ q).sum() / (J * L))}

    pen_per_sample = None
    if lam > 0.0:
        pen_per_sample = _kernels.penalty_forward(phi_cont, a, c, rho).sum(axis=1)
        loss += lam * pen_scale * float(pen_per_sample.sum())
        stats["mean_f_cons"] = float(pen_per_sample.mean())

    if not want_grad:
        return loss, None, None, None, stats

    dgamma = -q / ((1.0 + gamma) * LOG2)                     # (J, L, K)
    diag_val = dgamma / denom
    off_val = dgamma * (-gamma / denom)
    dp = np.broadcast_to(off_val[..., None], p.shape).copy()
    kk = np.arange(p.shape[-1])
    dp[..., kk, kk] = diag_val

    g_s = 2.0 * dp * s
    g_eff = np.einsum("jlkn,lmn->jlkm", g_s, W.conj())
    g_W = np.einsum("jlkn,jlkm->lmn", g_s, eff.conj())
    g_theta = np.einsum("jlkm,jlknm->ln", g_eff, T.conj())

    d_phi_q = (g_theta * theta.conj()).imag                  # (L, N)
    g_phi, g_rho = _kernels.soft_backward(phi_cont, d_phi_q, a, c, rho)

    if lam > 0.0:
        gout = np.full_like(phi_cont, lam * pen_scale)
        pgx, pgrho = _kernels.penalty_backward(phi_cont, gout, a, c, rho)
        g_phi = g_phi + pgx
        g_rho = g_rho + pgrho

    # through W = sqrt(Pt) V / ||V||
    S = np.sum(g_W.real * V.real + g_W.imag * V.imag, axis=(1, 2))
    g_V = alpha[:, None, None] * (g_W - (S / r2)[:, None, None] * V)
    km = params.k * params.m
    g_w_reals = np.concatenate([g_V.real.reshape(L, km),
                                g_V.imag.reshape(L, km)], axis=1)
    return loss, g_phi, g_w_reals, g_rho, stats


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

class Adam:
    """Adaptive moment estimation; updates tensors in place."""

    def __init__(self, tensors: dict[str, np.ndarray], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in tensors.items()}
        self.v = {k: np.zeros_like(v) for k, v in tensors.items()}

    def step(self, tensors: dict[str, np.ndarray],
             grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            tensors[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def evaluate(params: NetworkParams, samples: list[ChannelSample], c: float,
             config: SystemConfig, mode: str = "hard", draws=None):
    """Mean and per-sample WSR of a trained model on samples.

    draws: optional (G, h) with shapes (J, L, N, M)/(J, L, K, N) to score
    against true-channel draws instead of the estimates (per-sample WSR is
    then the average over draws).
    """
    from .linkmath import normalize_precoder, phases_to_theta
    X = stack_inputs(samples)
    phi_cont, w_reals, _ = forward(params, X, mode="eval")
    quant = qz.QuantizerParams(b=params.b, c=c, rho=params.rho)
    phi = (qz.soft_quantize(phi_cont, quant) if mode == "soft"
           else qz.hard_quantize(phi_cont, quant))
    theta = phases_to_theta(phi)
    W = normalize_precoder(split_outputs(params, w_reals), config.pt)
    if draws is None:
        G, h = stack_channels(samples)
        G, h = G[None], h[None]
    else:
        G, h = draws
    gamma = _score_gamma(theta, W, G, h, config.sigma2)
    per_sample = (np.log2(1.0 + gamma) @ np.asarray(config.q)).mean(axis=0)
    return float(per_sample.mean()), per_sample


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    params: NetworkParams
    c: float
    history: list[dict]
    best_epoch: int
    best_val_loss: float
    val_wsr_soft: float
    val_wsr_hard: float
    mean_f_cons: float
    gap: float
    train_config: TrainConfig


def _val_metrics(params, X_val, G_val, h_val, quant, config, lam, pen_scale,
                 kind_uses_draws, val_draws):
    """Validation loss plus the reporting metrics, one eval forward."""
    from .linkmath import normalize_precoder, phases_to_theta
    phi_cont, w_reals, _ = forward(params, X_val, mode="eval")
    q = np.asarray(config.q)

    if kind_uses_draws:
        G, h = val_draws
    else:
        G, h = G_val[None], h_val[None]
    loss, _, _, _, _ = head_loss_and_grads(
        phi_cont, w_reals, params, quant, config, G, h,
        lam=lam, pen_scale=pen_scale, want_grad=False)

    W = normalize_precoder(split_outputs(params, w_reals), config.pt)
    theta_soft = phases_to_theta(qz.soft_quantize(phi_cont, quant))
    theta_hard = phases_to_theta(qz.hard_quantize(phi_cont, quant))
    gamma_soft = _score_gamma(theta_soft, W, G, h, config.sigma2)
    gamma_hard = _score_gamma(theta_hard, W, G, h, config.sigma2)
    n_scored = G.shape[0] * X_val.shape[0]
    wsr_soft = float((np.log2(1.0 + gamma_soft) @ q).sum() / n_scored)
    wsr_hard = float((np.log2(1.0 + gamma_hard) @ q).sum() / n_scored)
    f_cons = float(sample_penalty(phi_cont, quant).mean())
    g = qz.gap(wsr_soft, wsr_hard) if wsr_soft > 0 else float("nan")
    return loss, wsr_soft, wsr_hard, f_cons, g


def fit(train_samples: list[ChannelSample], val_samples: list[ChannelSample],
        config: SystemConfig, tc: TrainConfig,
        params: NetworkParams | None = None) -> TrainResult:
    """Train the network; returns the best-validation checkpoint + history."""
    if len(train_samples) < 2 or len(val_samples) < 1:
        raise ConfigError("need at least 2 training and 1 validation samples")
    eta = train_samples[0].eta
    uses_draws = tc.loss_kind in ("averaged", "averaged+penalized")
    penalized = tc.loss_kind in ("penalized", "averaged+penalized")
    lam = tc.penalty_weight if penalized else 0.0
    J = tc.error_draws if uses_draws else 1
    pen_scale = float(J)

    if params is None:
        params = init_params(config, np.random.default_rng([tc.seed, 0]))
    quant = qz.QuantizerParams(b=config.b, c=tc.steepness, rho=params.rho)

    X_train = stack_inputs(train_samples)
    X_val = stack_inputs(val_samples)
    G_train, h_train = stack_channels(train_samples)
    G_val, h_val = stack_channels(val_samples)

    # standardization constants from the training split only
    params.input_mean[:] = X_train.mean(axis=0)
    params.input_std[:] = np.maximum(X_train.std(axis=0), 1e-12)

    if uses_draws:
        val_rng = np.random.default_rng([tc.seed, 3])
        val_draws = true_channel_draws(G_val, h_val, eta, J, val_rng)
    else:
        val_draws = None

    tensors = params.trainable()
    opt = Adam(tensors)
    lr = tc.lr
    n = len(train_samples)

    history: list[dict] = []
    best_val = float("inf")
    best_params = params.copy()
    best_epoch = 0
    stall_early = 0
    stall_plateau = 0
    plateau_best = float("inf")

    for epoch in range(1, tc.max_epochs + 1):
        order = np.random.default_rng([tc.seed, 1, epoch]).permutation(n)
        epoch_loss = 0.0
        scored = 0
        for start in range(0, n, tc.batch_size):
            idx = order[start:start + tc.batch_size]
            if len(idx) < 2:
                continue  # batch-norm needs >= 2 rows; reshuffled next epoch
            X = X_train[idx]
            phi_cont, w_reals, trace = forward(params, X, mode="train")
            if uses_draws:
                rng = np.random.default_rng([tc.seed, 2, epoch, start])
                G, h = true_channel_draws(G_train[idx], h_train[idx], eta,
                                          J, rng)
            else:
                G, h = G_train[idx][None], h_train[idx][None]
            loss, g_phi, g_w, g_rho, _ = head_loss_and_grads(
                phi_cont, w_reals, params, quant, config, G, h,
                lam=lam, pen_scale=pen_scale if uses_draws else 1.0)
            grads = backward(params, trace, g_phi, g_w)
            grads["rho"] = g_rho
            opt.step(tensors, grads, lr)
            epoch_loss += loss
            scored += len(idx)

        val_loss, wsr_soft, wsr_hard, f_cons, g = _val_metrics(
            params, X_val, G_val, h_val, quant, config, lam,
            pen_scale if uses_draws else 1.0, uses_draws, val_draws)
        history.append({
            "epoch": epoch, "lr": lr,
            "train_loss": epoch_loss / max(scored, 1),
            "val_wsr_soft": wsr_soft, "val_wsr_hard": wsr_hard,
            "mean_f_cons": f_cons, "gap": g, "val_loss": val_loss,
        })

        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
            best_epoch = epoch
            stall_early = 0
        else:
            stall_early += 1

        if val_loss < plateau_best:
            plateau_best = val_loss
            stall_plateau = 0
        else:
            stall_plateau += 1
            if stall_plateau >= tc.plateau_patience and lr > tc.lr_floor:
                lr = max(lr * tc.plateau_factor, tc.lr_floor)
                stall_plateau = 0

        if stall_early >= tc.patience:
            break

    quant_best = qz.QuantizerParams(b=config.b, c=tc.steepness,
                                    rho=best_params.rho)
    val_loss, wsr_soft, wsr_hard, f_cons, g = _val_metrics(
        best_params, X_val, G_val, h_val, quant_best, config, lam,
        pen_scale if uses_draws else 1.0, uses_draws, val_draws)
    return TrainResult(
        params=best_params, c=tc.steepness, history=history,
        best_epoch=best_epoch, best_val_loss=val_loss,
        val_wsr_soft=wsr_soft, val_wsr_hard=wsr_hard, mean_f_cons=f_cons,
        gap=g, train_config=tc)


def write_history(path: str, history: list[dict]) -> None:
    """Epoch-indexed training history as CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow([row[c] for c in HISTORY_COLUMNS])


# ---------------------------------------------------------------------------
# Algorithm drivers
# ---------------------------------------------------------------------------

@dataclass
class SearchState:
    """One comparative-search iterate."""
    iteration: int
    c: float
    wsr_t: float
    wsr_p: float
    gap: float


@dataclass
class SearchResult:
    c: float
    result: TrainResult
    states: list[SearchState]


def search_c(train_samples, val_samples, config: SystemConfig,
             tc: TrainConfig, c_init: float, train_fn=None,
             max_iterations: int = 16) -> SearchResult:
    """Comparative search for the quantizer steepness.

    Trains at the current c, scores validation WSR in soft (WSR_t) and hard
    (WSR_p) modes, and while WSR_p keeps improving steps c by -1 when the
    gap is below tau, else +1. Stops on the first non-improvement and
    returns the previous iterate; c is floored at 1 (a step that would
    cross the floor terminates the search). train_fn(c, iteration) may be
    injected for testing; it must return a TrainResult.
    """
    if c_init <= 0:
        raise ConfigError(f"c_init must be positive, got {c_init}")

    if train_fn is None:
        def train_fn(c, iteration):
            cfg = replace(tc, steepness=float(c), seed=tc.seed)
            return fit(train_samples, val_samples, config, cfg)

    states: list[SearchState] = []
    c = float(c_init)
    prev_wsr_p = 0.0
    best: tuple[float, TrainResult] | None = None
    for i in range(1, max_iterations + 1):
        res = train_fn(c, i)
        wsr_t, wsr_p = res.val_wsr_soft, res.val_wsr_hard
        g = qz.gap(wsr_t, wsr_p)
        states.append(SearchState(iteration=i, c=c, wsr_t=wsr_t,
                                  wsr_p=wsr_p, gap=g))
        if wsr_p < prev_wsr_p:
            break  # best holds the prior iterate
        best = (c, res)
        prev_wsr_p = wsr_p
        next_c = c - 1.0 if g < tc.tau else c + 1.0
        if next_c < 1.0:
            break  # floor reached; the current model stands
        c = next_c
    assert best is not None
    return SearchResult(c=best[0], result=best[1], states=states)


@dataclass
class IdqnnResult:
    params: NetworkParams
    c: float
    lam: float
    wsr_c: float
    f_cons_c: float
    pretrain: TrainResult
    result: TrainResult
    main_config: TrainConfig


def run_idqnn(train_samples, val_samples, config: SystemConfig,
              tc: TrainConfig) -> IdqnnResult:
    """Penalty-trained variant: pre-train at c = 1 without the penalty,
    derive the weight from the pre-training WSR and mean constraint value,
    then retrain from scratch with the penalized loss."""
    uses_draws = tc.loss_kind in ("averaged", "averaged+penalized")
    pre_kind = "averaged" if uses_draws else "perfect"
    main_kind = "averaged+penalized" if uses_draws else "penalized"

    pre_cfg = replace(tc, steepness=1.0, loss_kind=pre_kind,
                      penalty_weight=0.0)
    pre = fit(train_samples, val_samples, config, pre_cfg)
    wsr_c = pre.val_wsr_soft
    f_cons_c = pre.mean_f_cons
    lam = compute_lambda(wsr_c, f_cons_c)

    main_cfg = replace(tc, steepness=1.0, loss_kind=main_kind,
                       penalty_weight=lam)
    main = fit(train_samples, val_samples, config, main_cfg)
    return IdqnnResult(params=main.params, c=1.0, lam=lam, wsr_c=wsr_c,
                       f_cons_c=f_cons_c, pretrain=pre, result=main,
                       main_config=main_cfg)


def split_samples(samples, n_train: int, n_val: int, n_test: int):
    """Order-based split; samples are i.i.d. so no reshuffle is needed."""
    if n_train + n_val + n_test > len(samples):
        raise ConfigError(
            f"split {n_train}/{n_val}/{n_test} exceeds {len(samples)} samples")
    return (samples[:n_train], samples[n_train:n_train + n_val],
            samples[n_train + n_val:n_train + n_val + n_test])
