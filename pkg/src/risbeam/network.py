"""The trainable mapping from stacked channel reals to (phi_cont, W_pred).

Five dense layers of widths 32H, 16H, 8H, 4H, H with H = N + 2KM; each of
the four hidden layers is followed by batch normalization then ReLU, the
output layer is linear. The first 2KM outputs are the real then imaginary
parts of the raw precoder (row-major (M, K)), the last N are continuous
phases. Forward and backward passes are written out by hand so the full
gradient, including the quantizer boundaries rho that live here as a
trainable tensor, can be checked against finite differences.

Input standardization constants are stored with the parameters and applied
inside forward, so a checkpoint is self-contained.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .config import SystemConfig
from .errors import ConfigError
from .linkmath import RateReport, normalize_precoder, phases_to_theta, rate_report
from . import quantizer as qz

CHECKPOINT_FORMAT_VERSION = 1
BN_EPS = 1e-5
BN_MOMENTUM = 0.99


def input_width(config: SystemConfig) -> int:
    return 2 * config.N * config.M + 2 * config.N * config.K


def output_width(config: SystemConfig) -> int:
    return config.N + 2 * config.K * config.M


def hidden_widths(config: SystemConfig) -> list[int]:
    h = output_width(config)
    return [32 * h, 16 * h, 8 * h, 4 * h]


@dataclass
class NetworkParams:
    """All trainable tensors plus running statistics and input scaling."""

    n: int
    m: int
    k: int
    b: int
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    bn_gamma: list[np.ndarray]
    bn_beta: list[np.ndarray]
    bn_mean: list[np.ndarray]
    bn_var: list[np.ndarray]
    rho: np.ndarray
    input_mean: np.ndarray
    input_std: np.ndarray

    @property
    def out_width(self) -> int:
        return self.n + 2 * self.k * self.m

    @property
    def precoder_width(self) -> int:
        return 2 * self.k * self.m

    def trainable(self) -> dict[str, np.ndarray]:
        """Name -> tensor view for every trainable parameter."""
        t = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            t[f"w{i}"] = w
            t[f"b{i}"] = b
        for i in range(len(self.bn_gamma)):
            t[f"gamma{i}"] = self.bn_gamma[i]
            t[f"beta{i}"] = self.bn_beta[i]
        t["rho"] = self.rho
        return t

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            n=self.n, m=self.m, k=self.k, b=self.b,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            bn_gamma=[g.copy() for g in self.bn_gamma],
            bn_beta=[b.copy() for b in self.bn_beta],
            bn_mean=[m.copy() for m in self.bn_mean],
            bn_var=[v.copy() for v in self.bn_var],
            rho=self.rho.copy(),
            input_mean=self.input_mean.copy(),
            input_std=self.input_std.copy(),
        )

    def hidden_multiply_count(self) -> int:
        """Multiplies in the hidden-to-hidden/output dense layers (676 H^2)."""
        return sum(w.shape[0] * w.shape[1] for w in self.weights[1:])


def init_params(config: SystemConfig, rng: np.random.Generator) -> NetworkParams:
    """Fan-in scaled Gaussian weights, zero biases, identity batch norm;
    rho starts at the uniform-quantizer decision boundaries."""
    widths = [input_width(config)] + hidden_widths(config) + [output_width(config)]
    weights, biases = [], []
    for i in range(5):
        fan_in, fan_out = widths[i], widths[i + 1]
        scale = np.sqrt((2.0 if i < 4 else 1.0) / fan_in)
        weights.append(scale * rng.standard_normal((fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    d = widths[0]
    return NetworkParams(
        n=config.N, m=config.M, k=config.K, b=config.b,
        weights=weights, biases=biases,
        bn_gamma=[np.ones(w) for w in widths[1:5]],
        bn_beta=[np.zeros(w) for w in widths[1:5]],
        bn_mean=[np.zeros(w) for w in widths[1:5]],
        bn_var=[np.ones(w) for w in widths[1:5]],
        rho=qz.uniform_boundaries(config.b),
        input_mean=np.zeros(d),
        input_std=np.ones(d),
    )


@dataclass
class ForwardTrace:
    """Cached intermediates of a training-mode forward pass."""
    mode: str
    layer_inputs: list[np.ndarray] = field(default_factory=list)
    zhat: list[np.ndarray] = field(default_factory=list)
    istd: list[np.ndarray] = field(default_factory=list)
    relu_mask: list[np.ndarray] = field(default_factory=list)
    batch_size: int = 0


def forward(params: NetworkParams, X: np.ndarray, mode: str = "train"):
    """Run the dense stack; returns (phi_cont, w_reals, trace).

    phi_cont: (L, N); w_reals: (L, 2KM). Training mode normalizes with
    batch statistics and updates the running ones; inference mode uses the
    running statistics and is a pure function of (params, X).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.weights[0].shape[0]:
        raise ConfigError(
            f"expected input of width {params.weights[0].shape[0]}, "
            f"got shape {X.shape}")
    if mode not in ("train", "eval"):
        raise ConfigError(f"unknown mode {mode!r}")
    L = X.shape[0]
    if mode == "train" and L < 2:
        raise ConfigError("training mode needs batch size >= 2 for batch-norm")

    trace = ForwardTrace(mode=mode, batch_size=L)
    x = (X - params.input_mean) / params.input_std
    for i in range(4):
        trace.layer_inputs.append(x)
        z = x @ params.weights[i] + params.biases[i]
        if mode == "train":
            mu = z.mean(axis=0)
            var = z.var(axis=0)
            params.bn_mean[i] *= BN_MOMENTUM
            params.bn_mean[i] += (1.0 - BN_MOMENTUM) * mu
            params.bn_var[i] *= BN_MOMENTUM
            params.bn_var[i] += (1.0 - BN_MOMENTUM) * var
        else:
            mu = params.bn_mean[i]
            var = params.bn_var[i]
        istd = 1.0 / np.sqrt(var + BN_EPS)
        zhat = (z - mu) * istd
        y = params.bn_gamma[i] * zhat + params.bn_beta[i]
        mask = y > 0.0
        x = np.where(mask, y, 0.0)
        trace.zhat.append(zhat)
        trace.istd.append(istd)
        trace.relu_mask.append(mask)

    trace.layer_inputs.append(x)
    out = x @ params.weights[4] + params.biases[4]
    w_reals = out[:, :params.precoder_width]
    phi_cont = out[:, params.precoder_width:]
    return phi_cont, w_reals, trace


def backward(params: NetworkParams, trace: ForwardTrace,
             g_phi: np.ndarray, g_w: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of the dense stack given output gradients.

    g_phi: (L, N) gradient w.r.t. phi_cont; g_w: (L, 2KM) gradient w.r.t.
    the raw precoder reals. Returns a name -> gradient dict covering every
    dense weight/bias and batch-norm scale/shift (rho's gradient is
    produced where the quantizer is applied, in the loss head).
    """
    if trace.mode != "train":
        raise ConfigError("backward needs a training-mode trace")
    L = trace.batch_size
    if g_phi.shape[0] != L or g_w.shape[0] != L:
        raise ConfigError("gradient batch size does not match the trace")
    grads: dict[str, np.ndarray] = {}
    dout = np.concatenate([g_w, g_phi], axis=1)

    x4 = trace.layer_inputs[4]
    grads["w4"] = x4.T @ dout
    grads["b4"] = dout.sum(axis=0)
    dx = dout @ params.weights[4].T

    for i in range(3, -1, -1):
        dy = np.where(trace.relu_mask[i], dx, 0.0)
        zhat = trace.zhat[i]
        grads[f"gamma{i}"] = (dy * zhat).sum(axis=0)
        grads[f"beta{i}"] = dy.sum(axis=0)
        dzhat = dy * params.bn_gamma[i]
        # fused batch-norm backward through the batch statistics
        dz = (trace.istd[i] / L) * (
            L * dzhat
            - dzhat.sum(axis=0)
            - zhat * (dzhat * zhat).sum(axis=0))
        x_in = trace.layer_inputs[i]
        grads[f"w{i}"] = x_in.T @ dz
        grads[f"b{i}"] = dz.sum(axis=0)
        dx = dz @ params.weights[i].T
    return grads


def split_outputs(params: NetworkParams, w_reals: np.ndarray) -> np.ndarray:
    """Raw complex precoder (L, M, K) from the 2KM output reals."""
    L = w_reals.shape[0]
    km = params.k * params.m
    w_re = w_reals[:, :km].reshape(L, params.m, params.k)
    w_im = w_reals[:, km:].reshape(L, params.m, params.k)
    return w_re + 1j * w_im


@dataclass
class BeamformingSolution:
    """One predicted configuration with its achieved rates."""
    phi: np.ndarray              # (N,) discrete-or-soft phases
    theta: np.ndarray            # (N,) unit-modulus coefficients
    W: np.ndarray                # (M, K) power-normalized precoder
    report: RateReport
    phi_cont: np.ndarray         # (N,) pre-quantizer phases


def predict_solution(params: NetworkParams, samples, quant: qz.QuantizerParams,
                     config: SystemConfig, mode: str = "hard"):
    """Score samples with inference statistics.

    mode 'soft' runs the training-style quantizer, 'hard' the prediction
    staircase. Returns a list of BeamformingSolution (one per sample).
    """
    if mode not in ("soft", "hard"):
        raise ConfigError(f"unknown quantization mode {mode!r}")
    if isinstance(samples, (list, tuple)):
        sample_list = list(samples)
    else:
        sample_list = [samples]
    from .trainer import stack_inputs  # cycle-free: trainer imports lazily
    X = stack_inputs(sample_list)
    phi_cont, w_reals, _ = forward(params, X, mode="eval")
    if mode == "soft":
        phi = qz.soft_quantize(phi_cont, quant)
    else:
        phi = qz.hard_quantize(phi_cont, quant)
    theta = phases_to_theta(phi)
    W = normalize_precoder(split_outputs(params, w_reals), config.pt)
    out = []
    for i, s in enumerate(sample_list):
        rep = rate_report(s.h_hat, theta[i], s.G_hat, W[i], config.sigma2,
                          config.q)
        out.append(BeamformingSolution(
            phi=phi[i], theta=theta[i], W=W[i], report=rep,
            phi_cont=phi_cont[i]))
    return out


# ---------------------------------------------------------------------------
# Checkpoint serialization (text JSON, versioned, full double precision)
# ---------------------------------------------------------------------------

def _tensor_record(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "values": arr.ravel().tolist()}


def _tensor_from_record(rec: dict) -> np.ndarray:
    return np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"])


def save_checkpoint(path: str, params: NetworkParams, c: float,
                    config: SystemConfig, meta: dict | None = None) -> None:
    tensors = {name: _tensor_record(t) for name, t in params.trainable().items()}
    for i in range(4):
        tensors[f"bn_mean{i}"] = _tensor_record(params.bn_mean[i])
        tensors[f"bn_var{i}"] = _tensor_record(params.bn_var[i])
    tensors["input_mean"] = _tensor_record(params.input_mean)
    tensors["input_std"] = _tensor_record(params.input_std)
    record = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "risbeam-checkpoint",
        "system": config.to_dict(),
        "quantizer": {"b": params.b, "c": c},
        "tensors": tensors,
        "meta": meta or {},
    }
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(record, fh, sort_keys=True)
    os.replace(tmp, path)


def load_checkpoint(path: str):
    """Returns (params, quant, config, meta)."""
    with open(path) as fh:
        record = json.load(fh)
    if record.get("kind") != "risbeam-checkpoint":
        raise ConfigError(f"{path} is not a risbeam checkpoint")
    if record["format_version"] != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(
            f"unsupported checkpoint version {record['format_version']}")
    config = SystemConfig.from_dict(record["system"])
    t = {name: _tensor_from_record(rec)
         for name, rec in record["tensors"].items()}
    params = NetworkParams(
        n=config.N, m=config.M, k=config.K, b=config.b,
        weights=[t[f"w{i}"] for i in range(5)],
        biases=[t[f"b{i}"] for i in range(5)],
        bn_gamma=[t[f"gamma{i}"] for i in range(4)],
        bn_beta=[t[f"beta{i}"] for i in range(4)],
        bn_mean=[t[f"bn_mean{i}"] for i in range(4)],
        bn_var=[t[f"bn_var{i}"] for i in range(4)],
        rho=t["rho"],
        input_mean=t["input_mean"],
        input_std=t["input_std"],
    )
    quant = qz.QuantizerParams(b=params.b, c=record["quantizer"]["c"],
                               rho=params.rho)
    return params, quant, config, record["meta"]
