"""Numerical helpers shared by the rest of the package.

Seeded Gaussian streams, the Adam optimizer, Pearson correlation and a
small PCA.  Everything is float64 and operates on plain numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class RngStream:
    """A reproducible Gaussian source identified by ``(seed, stream_id)``.

    Two streams built from the same pair produce identical draws; different
    ``stream_id`` values are spawned as independent children of the same
    root seed.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def derive(self, stream_id: int) -> "RngStream":
        """Independent stream sharing this stream's seed."""
        return RngStream(self.seed, stream_id)

    def normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def gaussian_sample(rng: RngStream, n: int) -> np.ndarray:
    """Draw ``n`` standard-normal values, advancing ``rng``."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    return rng.normal(n)


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(cls, size: int, **kwargs) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0, **kwargs)

    def copy(self) -> "AdamState":
        return AdamState(
            self.first_moment.copy(),
            self.second_moment.copy(),
            self.step_count,
            self.beta1,
            self.beta2,
            self.epsilon,
        )


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray, lr: float):
    """One bias-corrected Adam update.

    Returns ``(new_params, new_state)``; the inputs are not modified.
    """
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.shape != state.first_moment.shape:
        raise ValueError(
            f"shape mismatch: params {params.shape}, grads {grads.shape}, "
            f"moments {state.first_moment.shape}"
        )
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    b1, b2 = state.beta1, state.beta2
    step = state.step_count + 1
    m = b1 * state.first_moment + (1.0 - b1) * grads
    v = b2 * state.second_moment + (1.0 - b2) * grads * grads
    m_hat = m / (1.0 - b1**step)
    v_hat = v / (1.0 - b2**step)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return new_params, AdamState(m, v, step, b1, b2, state.epsilon)


def pearson_correlation(a, b) -> tuple[float, bool]:
    """Sample Pearson r between two flattened arrays.

    Returns ``(r, degenerate)``.  When either input has zero variance the
    coefficient is undefined; ``(0.0, True)`` is returned instead of raising
    so that grids of correlations never abort.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError("need at least two values")
    da = a - a.mean()
    db = b - b.mean()
    saa = float(da @ da)
    sbb = float(db @ db)
    denom = math.sqrt(saa) * math.sqrt(sbb)  # separate roots avoid underflow of saa * sbb
    if denom == 0.0:
        return 0.0, True
    r = float(da @ db) / denom
    return float(np.clip(r, -1.0, 1.0)), False


@dataclass
class PcaBasis:
    mean: np.ndarray
    components: np.ndarray  # (k, d), rows orthonormal
    explained_variance: np.ndarray = field(repr=False)

    def project(self, rows, k: int | None = None) -> np.ndarray:
        comps = self.components if k is None else self.components[:k]
        return (np.asarray(rows, dtype=np.float64) - self.mean) @ comps.T

    def reconstruct(self, coords) -> np.ndarray:
        coords = np.asarray(coords, dtype=np.float64)
        k = coords.shape[-1]
        return coords @ self.components[:k] + self.mean

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        total = self.explained_variance.sum()
        if total == 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / total


def pca_fit(rows) -> PcaBasis:
    """PCA by eigendecomposition of the sample covariance.

    Components are sorted by decreasing variance and signed so that each
    component's largest-magnitude entry is positive.
    """
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"pca_fit needs a 2-D array with >= 2 rows, got shape {x.shape}")
    mean = x.mean(axis=0)
    centred = x - mean
    cov = centred.T @ centred / (x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaBasis(mean=mean, components=comps, explained_variance=evals)
