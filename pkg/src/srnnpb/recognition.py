"""Recognition of novel sequences by prediction-error minimization.

Network weights stay frozen; only the PB distribution ``(mu, ln sigma)`` of
the observation is optimized, on the reconstruction error of the observed
prefix alone (no KL term).  Each iteration samples a PB, rolls the network
out over the prefix, backpropagates to ``(mu, ln sigma)`` and takes an Adam
step.  An early update then jumps ``mu`` straight to the sampled PB whenever
that sample reached the lowest loss seen so far (``L_MIN``).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, backward, rollout
from .numerics import AdamState, RngStream, adam_step
from .training import DivergenceError

INIT_MODES = ("baseline", "learned", "random")


@dataclass(frozen=True)
class RecognitionConfig:
    iterations: int = 100
    learning_rate: float = 0.1
    observed_fraction: float = 0.8
    init_mode: str = "baseline"
    random_candidates: int = 10
    trials: int = 10
    seed: int = 0
    presearch_sigma: float = 1e-6
    reset_moments_on_early_update: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0.0 < self.observed_fraction <= 1.0:
            raise ValueError("observed_fraction must be in (0, 1]")
        if self.init_mode not in INIT_MODES:
            raise ValueError(f"init_mode must be one of {INIT_MODES}, got {self.init_mode!r}")
        if self.init_mode == "random" and self.random_candidates < 1:
            raise ValueError("random_candidates must be >= 1")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.presearch_sigma <= 0:
            raise ValueError("presearch_sigma must be > 0")


@dataclass
class TraceRecord:
    step: int
    mu: np.ndarray  # mean used to draw this step's PB
    sigma: np.ndarray
    pb: np.ndarray
    loss: float
    l_min: float
    early_update: bool


@dataclass
class RecognitionResult:
    mu: np.ndarray  # state after the last iteration
    sigma: np.ndarray
    best_mu: np.ndarray
    reconstruction_loss: float
    init_mu: np.ndarray
    init_loss: float
    n_observed: int
    trace: list[TraceRecord] = field(default_factory=list)
    prediction_error: float = math.nan

    @property
    def l_min_trace(self) -> np.ndarray:
        return np.array([r.l_min for r in self.trace])


def observed_split(sequence, fraction: float):
    """Split into the observed prefix (``floor(fraction * T)`` steps, at least 1) and the rest."""
    seq = np.asarray(sequence, dtype=np.float64)
    if seq.shape[0] < 2:
        raise ValueError("sequence must have at least 2 steps")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must be in (0, 1]")
    n_obs = max(1, int(math.floor(fraction * seq.shape[0] + 1e-9)))
    return seq[:n_obs], seq[n_obs:]


def sequence_errors(params: ModelParams, pbs, target) -> np.ndarray:
    """Summed squared error of the closed-loop output of each PB row against ``target``."""
    target = np.asarray(target, dtype=np.float64)
    x = rollout(params, pbs, target.shape[0]).x_hat
    return np.sum((x - target[None]) ** 2, axis=(1, 2))


def pre_search(params: ModelParams, prefix, candidates, sigma: float = 1e-6, rng: RngStream | None = None):
    """Return ``(best_candidate, its_loss)`` over candidate means.

    Each candidate is perturbed by ``sigma * eps`` when ``rng`` is given.
    Ties go to the lowest index.
    """
    cands = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    if cands.shape[0] == 0:
        raise ValueError("no candidates")
    pbs = cands
    if rng is not None:
        pbs = cands + sigma * rng.normal(cands.shape)
    losses = sequence_errors(params, pbs, prefix)
    k = int(np.argmin(losses))
    return cands[k].copy(), float(losses[k])


def initial_mu(params: ModelParams, prefix, config: RecognitionConfig, rng: RngStream) -> np.ndarray:
    P = params.pb_mu.shape[1]
    if config.init_mode == "baseline":
        return np.zeros(P)
    if config.init_mode == "learned":
        candidates = params.pb_mu
    else:
        candidates = rng.normal((config.random_candidates, P))
    mu, _ = pre_search(params, prefix, candidates, config.presearch_sigma, rng)
    return mu


def recognize(
    params: ModelParams,
    prefix,
    config: RecognitionConfig,
    rng: RngStream,
    deterministic: bool = False,
    init: np.ndarray | None = None,
) -> RecognitionResult:
    """Infer ``(mu, sigma)`` for an observed prefix with the weights frozen.

    ``init`` overrides the warm start chosen by ``config.init_mode``.  The
    reported ``best_mu`` is the lowest-loss point among the warm start and
    every sampled PB; its loss is re-evaluated with sigma = 0.  In
    deterministic mode the PB is ``mu`` itself, sigma is never used and the
    early update is skipped (it would undo the gradient step).
    """
    prefix = np.asarray(prefix, dtype=np.float64)
    if prefix.ndim != 2 or prefix.shape[0] < 1:
        raise ValueError("prefix must be a non-empty (T, D) array")
    P = params.pb_mu.shape[1]
    mu = initial_mu(params, prefix, config, rng) if init is None else np.asarray(init, dtype=np.float64).copy()
    if mu.shape != (P,):
        raise ValueError(f"initial mu has shape {mu.shape}, expected ({P},)")
    init_mu = mu.copy()
    init_loss = float(sequence_errors(params, mu[None], prefix)[0])

    log_sigma = np.zeros(P)
    adam = AdamState.zeros(2 * P, beta1=config.adam_beta1, beta2=config.adam_beta2, epsilon=config.adam_epsilon)
    l_min = math.inf
    best_pb, best_loss = init_mu, init_loss
    trace: list[TraceRecord] = []
    T = prefix.shape[0]
    for s in range(1, config.iterations + 1):
        sigma = np.exp(log_sigma)
        if deterministic:
            eps = None
            pb = mu.copy()
        else:
            eps = rng.normal(P)
            pb = mu + sigma * eps
        cache = rollout(params, pb[None], T)
        diff = cache.x_hat[0] - prefix
        loss = float(np.sum(diff * diff))
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite recognition loss at iteration {s}", s)
        d_pb = backward(cache, 2.0 * diff, params, weights=False).d_pb[0]
        d_ls = np.zeros(P) if deterministic else d_pb * eps * sigma
        vec, adam = adam_step(adam, np.concatenate([mu, log_sigma]), np.concatenate([d_pb, d_ls]),
                              config.learning_rate)
        new_mu, new_log_sigma = vec[:P], vec[P:]
        fired = False
        if loss <= l_min:
            l_min = loss
            if not deterministic:
                new_mu = pb.copy()
                fired = True
                if config.reset_moments_on_early_update:
                    adam.first_moment[:P] = 0.0
                    adam.second_moment[:P] = 0.0
        if loss < best_loss:
            best_pb, best_loss = pb.copy(), loss
        trace.append(TraceRecord(s, mu.copy(), sigma.copy(), pb.copy(), loss, l_min, fired))
        mu, log_sigma = new_mu, new_log_sigma

    recon = float(sequence_errors(params, best_pb[None], prefix)[0])
    return RecognitionResult(
        mu=mu,
        sigma=np.exp(log_sigma),
        best_mu=best_pb.copy(),
        reconstruction_loss=recon,
        init_mu=init_mu,
        init_loss=init_loss,
        n_observed=T,
        trace=trace,
    )


def prediction_error(params: ModelParams, result: RecognitionResult, full_target) -> float:
    """Squared error on the unobserved suffix after regenerating the full length from ``best_mu``."""
    full = np.asarray(full_target, dtype=np.float64)
    n_obs = result.n_observed
    if full.shape[0] <= n_obs:
        raise ValueError("target has no unobserved suffix")
    x = rollout(params, result.best_mu[None], full.shape[0]).x_hat[0]
    return float(np.sum((x[n_obs:] - full[n_obs:]) ** 2))


@dataclass
class TrialOutcome:
    pattern: int
    trial: int
    reconstruction_loss: float
    prediction_error: float
    result: RecognitionResult


def recognize_pattern(params, pattern, config: RecognitionConfig, rng: RngStream, deterministic=False):
    """Split ``pattern``, recognize the prefix and score the suffix."""
    prefix, suffix = observed_split(pattern, config.observed_fraction)
    res = recognize(params, prefix, config, rng, deterministic)
    if suffix.shape[0]:
        res.prediction_error = prediction_error(params, res, pattern)
    return res


def _trial(args):
    params, p_idx, trial, pattern, config, deterministic = args
    rng = RngStream(config.seed, p_idx * config.trials + trial)
    res = recognize_pattern(params, pattern, config, rng, deterministic)
    return TrialOutcome(p_idx, trial, res.reconstruction_loss, res.prediction_error, res)


def run_recognition_experiment(params, patterns, config: RecognitionConfig, deterministic=False, workers: int = 1):
    """``trials`` recognitions of every pattern, one derived stream per (pattern, trial).

    Trials are independent, so ``workers > 1`` spreads them over processes;
    outcomes come back in (pattern, trial) order either way.
    """
    patterns = list(patterns)
    if not patterns:
        raise ValueError("no patterns")
    jobs = [(params, p, t, pat, config, deterministic)
            for p, pat in enumerate(patterns) for t in range(config.trials)]
    if workers <= 1 or len(jobs) == 1:
        return [_trial(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_trial, jobs))


def summarize(outcomes) -> dict[str, float]:
    rec = np.array([o.reconstruction_loss for o in outcomes])
    pred = np.array([o.prediction_error for o in outcomes])
    return {
        "recon_mean": float(rec.mean()),
        "recon_std": float(rec.std()),
        "pred_mean": float(np.nanmean(pred)) if np.any(np.isfinite(pred)) else math.nan,
        "pred_std": float(np.nanstd(pred)) if np.any(np.isfinite(pred)) else math.nan,
        "n": len(outcomes),
    }
