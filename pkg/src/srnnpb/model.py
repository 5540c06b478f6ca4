"""Stochastic RNN with parametric biases.

A single LSTM layer is driven at every step by ``z_t = [PB; x_hat_{t-1}]``
and followed by an affine read-out.  Generation is closed-loop: the first
input and the LSTM state start at zero, and each output is fed back as the
next input.  The parametric bias (PB) is drawn once per sequence as
``mu + sigma * eps`` and held fixed for the whole rollout.

Gradients are hand-derived (BPTT through the feedback path) and reach
``mu`` and ``log_sigma`` through the reparameterization.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import kernels
from .numerics import RngStream

THETA_FIELDS = ("w_x", "w_h", "b", "w_out", "b_out")
PARAM_FIELDS = THETA_FIELDS + ("pb_mu", "pb_log_sigma")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    pb_dim: int
    hidden_dim: int
    deterministic: bool = False
    beta: float = 0.0

    def __post_init__(self):
        for name in ("input_dim", "pb_dim", "hidden_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    @property
    def z_dim(self) -> int:
        return self.pb_dim + self.input_dim


@dataclass
class ModelParams:
    """Network weights (theta) plus per-sequence PB distribution parameters.

    Gate blocks in ``w_x``, ``w_h`` and ``b`` are ordered input, forget,
    candidate, output.  ``pb_log_sigma`` stores ``ln sigma``.
    """

    w_x: np.ndarray  # (4H, P + D)
    w_h: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)
    w_out: np.ndarray  # (D, H)
    b_out: np.ndarray  # (D,)
    pb_mu: np.ndarray  # (N, P)
    pb_log_sigma: np.ndarray  # (N, P)

    @property
    def sigma(self) -> np.ndarray:
        return np.exp(self.pb_log_sigma)

    @property
    def n_sequences(self) -> int:
        return self.pb_mu.shape[0]

    def copy(self) -> "ModelParams":
        return ModelParams(**{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def to_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, name).ravel() for name in PARAM_FIELDS])

    def with_vector(self, vec: np.ndarray) -> "ModelParams":
        out, pos = {}, 0
        for name in PARAM_FIELDS:
            ref = getattr(self, name)
            out[name] = np.array(vec[pos : pos + ref.size]).reshape(ref.shape)
            pos += ref.size
        if pos != vec.size:
            raise ValueError(f"vector length {vec.size} does not match parameter count {pos}")
        return ModelParams(**out)

    def check(self, config: ModelConfig) -> None:
        """Raise ``ValueError`` if array shapes disagree with ``config``."""
        H, D, P = config.hidden_dim, config.input_dim, config.pb_dim
        expected = {
            "w_x": (4 * H, P + D),
            "w_h": (4 * H, H),
            "b": (4 * H,),
            "w_out": (D, H),
            "b_out": (D,),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise ValueError(f"{name} has shape {got}, expected {shape}")
        for name in ("pb_mu", "pb_log_sigma"):
            arr = getattr(self, name)
            if arr.ndim != 2 or arr.shape[1] != P:
                raise ValueError(f"{name} has shape {arr.shape}, expected (N, {P})")
        if self.pb_mu.shape != self.pb_log_sigma.shape:
            raise ValueError("pb_mu and pb_log_sigma shapes differ")


def init_params(config: ModelConfig, n_sequences: int, rng: RngStream) -> ModelParams:
    """Fresh parameters: uniform(+-1/sqrt(fan_in)) weights, forget bias 1, mu 0, sigma 1."""
    H, D, P = config.hidden_dim, config.input_dim, config.pb_dim
    bound_x = 1.0 / np.sqrt(P + D + H)
    bound_out = 1.0 / np.sqrt(H)
    b = np.zeros(4 * H)
    b[H : 2 * H] = 1.0
    return ModelParams(
        w_x=rng.uniform(-bound_x, bound_x, (4 * H, P + D)),
        w_h=rng.uniform(-bound_x, bound_x, (4 * H, H)),
        b=b,
        w_out=rng.uniform(-bound_out, bound_out, (D, H)),
        b_out=np.zeros(D),
        pb_mu=np.zeros((n_sequences, P)),
        pb_log_sigma=np.zeros((n_sequences, P)),
    )


@dataclass
class ForwardCache:
    """Activations of a batched closed-loop rollout, arrays shaped (B, T, .)."""

    pb: np.ndarray
    z: np.ndarray
    gates: np.ndarray
    c: np.ndarray
    h: np.ndarray
    x_hat: np.ndarray
    eps: np.ndarray | None = None
    param_id: int = field(default=0, repr=False)

    @property
    def length(self) -> int:
        return self.x_hat.shape[1]


@dataclass
class Gradients:
    w_x: np.ndarray
    w_h: np.ndarray
    b: np.ndarray
    w_out: np.ndarray
    b_out: np.ndarray
    d_pb: np.ndarray  # (B, P), gradient wrt the sampled PB of each batch row


def reparameterize(mu, sigma, epsilon, deterministic: bool = False) -> np.ndarray:
    """``mu + sigma * epsilon``; returns ``mu`` unchanged in deterministic mode."""
    mu = np.asarray(mu, dtype=np.float64)
    if deterministic:
        return mu.copy()
    sigma = np.asarray(sigma, dtype=np.float64)
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if mu.shape != sigma.shape or mu.shape != epsilon.shape:
        raise ValueError(f"shape mismatch: {mu.shape}, {sigma.shape}, {epsilon.shape}")
    return mu + sigma * epsilon


def _sigmoid(a):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-a))


def lstm_step(z, h, c, params: ModelParams):
    """One LSTM cell update.

    Returns ``(h_next, c_next, gates)`` where ``gates`` is a dict of the
    post-activation gate values (``i``, ``f``, ``g``, ``o``).
    """
    H = params.w_h.shape[1]
    z = np.asarray(z, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if z.shape != (params.w_x.shape[1],) or h.shape != (H,) or c.shape != (H,):
        raise ValueError(f"shape mismatch: z {z.shape}, h {h.shape}, c {c.shape}")
    a = params.w_x @ z + params.w_h @ h + params.b
    i = _sigmoid(a[:H])
    f = _sigmoid(a[H : 2 * H])
    g = np.tanh(a[2 * H : 3 * H])
    o = _sigmoid(a[3 * H :])
    c_next = f * c + i * g
    h_next = o * np.tanh(c_next)
    return h_next, c_next, {"i": i, "f": f, "g": g, "o": o}


def output_project(h, params: ModelParams) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != params.w_out.shape[1]:
        raise ValueError(f"hidden size {h.shape[-1]} != {params.w_out.shape[1]}")
    return h @ params.w_out.T + params.b_out


def rollout(params: ModelParams, pb, T: int) -> ForwardCache:
    """Batched closed-loop generation for PB rows of shape (B, P)."""
    pb = np.ascontiguousarray(np.atleast_2d(np.asarray(pb, dtype=np.float64)))
    if pb.shape[1] != params.pb_mu.shape[1]:
        raise ValueError(f"PB width {pb.shape[1]} != pb_dim {params.pb_mu.shape[1]}")
    if T < 0:
        raise ValueError("T must be >= 0")
    z, gates, c, h, x = kernels.forward(
        params.w_x, params.w_h, params.b, params.w_out, params.b_out, pb, int(T)
    )
    return ForwardCache(pb=pb, z=z, gates=gates, c=c, h=h, x_hat=x, param_id=_param_id(params))


def generate_closed_loop(params: ModelParams, pb, T: int):
    """Generate one sequence of length ``T`` from a single PB vector.

    Returns ``(sequence (T, D), cache)``.
    """
    pb = np.asarray(pb, dtype=np.float64)
    if pb.ndim != 1:
        raise ValueError("pb must be a vector; use rollout() for batches")
    cache = rollout(params, pb[None, :], T)
    return cache.x_hat[0], cache


def backward(cache: ForwardCache, d_output, params: ModelParams, weights: bool = True) -> Gradients:
    """Exact BPTT gradients of a scalar loss given ``d_output = dL/dx_hat``.

    ``d_output`` has the shape of ``cache.x_hat`` (or (T, D) for a single
    sequence).  With ``weights=False`` only ``d_pb`` is computed and the
    weight gradients are returned as zeros.
    """
    if cache.param_id and cache.param_id != _param_id(params):
        raise ValueError("cache was produced with different parameters")
    d_output = np.asarray(d_output, dtype=np.float64)
    if d_output.ndim == 2:
        d_output = d_output[None]
    if d_output.shape != cache.x_hat.shape:
        raise ValueError(f"d_output shape {d_output.shape} != outputs {cache.x_hat.shape}")
    P = cache.pb.shape[1]
    dw_x, dw_h, db, dw_out, db_out, d_pb = kernels.backward(
        params.w_x,
        params.w_h,
        params.w_out,
        P,
        cache.z,
        cache.gates,
        cache.c,
        cache.h,
        np.ascontiguousarray(d_output),
        weights,
    )
    return Gradients(w_x=dw_x, w_h=dw_h, b=db, w_out=dw_out, b_out=db_out, d_pb=d_pb)


def pb_gradients(d_pb, eps, sigma, deterministic: bool = False):
    """Chain the PB gradient into ``(d_mu, d_log_sigma)``."""
    d_mu = np.array(d_pb, dtype=np.float64)
    if deterministic or eps is None:
        return d_mu, np.zeros_like(d_mu)
    return d_mu, d_mu * eps * sigma


def _param_id(params: ModelParams) -> int:
    # identity of the theta arrays; cheap guard against cache/params mix-ups
    return hash(tuple(id(getattr(params, n)) for n in THETA_FIELDS)) or 1
