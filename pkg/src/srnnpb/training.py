"""Negative-ELBO loss and the full-batch training loop.

The reconstruction term sums squared error over time steps and dimensions
and averages over sequences only; the KL term is the closed form against a
unit Gaussian prior, also averaged over sequences.  One epoch draws one
``eps`` per sequence, rolls every sequence out closed-loop, accumulates
gradients over the whole dataset and takes a single Adam step on the joint
vector of network weights, ``mu`` and ``ln sigma``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import (
    ModelConfig,
    ModelParams,
    backward,
    init_params,
    pb_gradients,
    reparameterize,
    rollout,
)
from .numerics import AdamState, RngStream, adam_step, gaussian_sample

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Raised when a loss becomes non-finite."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5000
    learning_rate: float = 1e-3
    beta: float = 0.0
    seed: int = 0
    full_batch: bool = True
    checkpoint_every: int = 0
    clip_norm: float | None = None
    # "sum": squared error summed over steps and dims (the reported metric);
    # "mean": divided by steps x dims, which puts beta on a per-element scale
    recon_reduction: str = "sum"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if self.recon_reduction not in ("sum", "mean"):
            raise ValueError(f"recon_reduction must be 'sum' or 'mean', got {self.recon_reduction!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not self.full_batch:
            raise ValueError("only full-batch training is supported")


@dataclass(frozen=True)
class LossBreakdown:
    recon: float
    kl: float
    total: float


def _as_batch(sequences):
    """Pad a list of (T_i, D) arrays into (N, T_max, D) plus a (N, T_max) mask."""
    seqs = [np.asarray(s, dtype=np.float64) for s in sequences]
    if not seqs:
        raise ValueError("no sequences")
    D = seqs[0].shape[1]
    T = max(s.shape[0] for s in seqs)
    data = np.zeros((len(seqs), T, D))
    mask = np.zeros((len(seqs), T))
    for i, s in enumerate(seqs):
        if s.ndim != 2 or s.shape[1] != D:
            raise ValueError(f"sequence {i} has shape {s.shape}, expected (T, {D})")
        data[i, : s.shape[0]] = s
        mask[i, : s.shape[0]] = 1.0
    return data, mask


def reconstruction_loss(targets, predictions) -> float:
    """Squared error summed over steps and dimensions, averaged over sequences."""
    if len(targets) != len(predictions):
        raise ValueError(f"{len(targets)} targets vs {len(predictions)} predictions")
    if not targets:
        raise ValueError("no sequences")
    total = 0.0
    for i, (x, y) in enumerate(zip(targets, predictions)):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.shape != y.shape:
            raise ValueError(f"sequence {i}: target {x.shape} vs prediction {y.shape}")
        total += float(np.sum((x - y) ** 2))
    return total / len(targets)


def kl_divergence(mu, log_sigma) -> float:
    mu = np.asarray(mu, dtype=np.float64)
    log_sigma = np.asarray(log_sigma, dtype=np.float64)
    if mu.shape != log_sigma.shape:
        raise ValueError(f"shape mismatch: {mu.shape} vs {log_sigma.shape}")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(log_sigma))):
        raise ValueError("non-finite mu or log_sigma")
    n = mu.shape[0] if mu.ndim == 2 else 1
    var = np.exp(2.0 * log_sigma)
    return 0.5 * float(np.sum(mu * mu + var - 1.0 - 2.0 * log_sigma)) / n


def kl_gradients(mu, log_sigma):
    """Gradients of ``kl_divergence`` wrt ``mu`` and ``log_sigma``."""
    n = mu.shape[0]
    return mu / n, (np.exp(2.0 * log_sigma) - 1.0) / n


def total_loss(recon: float, kl: float, beta: float) -> LossBreakdown:
    return LossBreakdown(recon=recon, kl=kl, total=recon + beta * kl)


def loss_and_gradients(
    params: ModelParams, data, mask, eps, beta: float, deterministic: bool, reduction: str = "sum"
):
    """Forward + backward over a padded batch for a fixed noise draw ``eps``.

    Returns ``(LossBreakdown, grad_vector)`` with the gradient laid out like
    ``params.to_vector()``.  With ``reduction="mean"`` the reconstruction
    term of each sequence is divided by its number of elements ``T_i * D``.
    """
    N, T, D = data.shape
    sigma = params.sigma
    pb = reparameterize(params.pb_mu, sigma, eps, deterministic)
    cache = rollout(params, pb, T)
    weight = mask[:, :, None] / N
    if reduction == "mean":
        weight = weight / (mask.sum(axis=1)[:, None, None] * D)
    diff = (cache.x_hat - data) * (mask[:, :, None] > 0)
    recon = float(np.sum(diff * diff * weight))
    d_out = 2.0 * weight * diff
    grads = backward(cache, d_out, params)
    d_mu, d_ls = pb_gradients(grads.d_pb, eps, sigma, deterministic)
    if deterministic:
        kl = 0.0
    else:
        kl = kl_divergence(params.pb_mu, params.pb_log_sigma)
        if beta:
            g_mu, g_ls = kl_gradients(params.pb_mu, params.pb_log_sigma)
            d_mu = d_mu + beta * g_mu
            d_ls = d_ls + beta * g_ls
    loss = total_loss(recon, kl, 0.0 if deterministic else beta)
    vec = np.concatenate(
        [grads.w_x.ravel(), grads.w_h.ravel(), grads.b, grads.w_out.ravel(), grads.b_out,
         d_mu.ravel(), d_ls.ravel()]
    )
    return loss, vec


def train_epoch(
    params: ModelParams,
    sequences,
    model_config: ModelConfig,
    config: TrainConfig,
    rng: RngStream,
    adam: AdamState | None = None,
    epoch: int = 0,
):
    """One full-batch update.

    Returns ``(new_params, LossBreakdown, adam_state)``; the loss is that of
    the forward pass made before the update.
    """
    data, mask = _as_batch(sequences)
    N = data.shape[0]
    if params.pb_mu.shape[0] != N:
        raise ValueError(f"params hold {params.pb_mu.shape[0]} PB rows for {N} sequences")
    eps = gaussian_sample(rng, N * model_config.pb_dim).reshape(N, model_config.pb_dim)
    loss, grad = loss_and_gradients(
        params, data, mask, eps, config.beta, model_config.deterministic, config.recon_reduction
    )
    if not np.isfinite(loss.total) or not np.all(np.isfinite(grad)):
        raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch)
    if config.clip_norm is not None:
        norm = float(np.linalg.norm(grad))
        if norm > config.clip_norm:
            grad = grad * (config.clip_norm / norm)
    if adam is None:
        adam = AdamState.zeros(grad.size, beta1=config.adam_beta1, beta2=config.adam_beta2,
                               epsilon=config.adam_epsilon)
    vec, adam = adam_step(adam, params.to_vector(), grad, config.learning_rate)
    return params.with_vector(vec), loss, adam


@dataclass
class TrainResult:
    params: ModelParams
    history: list[LossBreakdown]
    adam: AdamState

    def history_rows(self):
        return [(i + 1, h.recon, h.kl, h.total) for i, h in enumerate(self.history)]


def train(
    sequences,
    model_config: ModelConfig,
    config: TrainConfig,
    on_checkpoint: Callable[[int, ModelParams, list[LossBreakdown]], None] | None = None,
) -> TrainResult:
    """Train fresh parameters for ``config.epochs`` epochs.

    Weight initialisation uses stream 0 of ``config.seed`` and the per-epoch
    noise uses stream 1, so runs that share a seed but differ in ``beta``
    see the same noise.
    """
    sequences = list(sequences)
    params = init_params(model_config, len(sequences), RngStream(config.seed, 0))
    noise = RngStream(config.seed, 1)
    adam = None
    history: list[LossBreakdown] = []
    for epoch in range(1, config.epochs + 1):
        params, loss, adam = train_epoch(
            params, sequences, model_config, config, noise, adam, epoch
        )
        history.append(loss)
        if config.checkpoint_every and epoch % config.checkpoint_every == 0:
            log.info("epoch %d recon %.6g kl %.6g", epoch, loss.recon, loss.kl)
            if on_checkpoint is not None:
                on_checkpoint(epoch, params, history)
    return TrainResult(params=params, history=history, adam=adam)
