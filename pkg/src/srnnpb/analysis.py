"""Plot-ready analyses of trained models.

Every function returns an :class:`AnalysisReport`: a tagged table plus a
metadata dict, serialised as ``<kind>-<checkpoint_id>.csv`` with a JSON
sidecar of the same stem.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelParams, rollout
from .numerics import RngStream, pca_fit, pearson_correlation


@dataclass
class AnalysisReport:
    kind: str
    columns: list[str]
    rows: list[list]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(f"row {i} has {len(row)} values, expected {width}")

    def column(self, name: str) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([row[j] for row in self.rows], dtype=np.float64)

    def save(self, directory, checkpoint_id: str = "model") -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = f"{self.kind}-{checkpoint_id}"
        csv_path = directory / f"{stem}.csv"
        json_path = directory / f"{stem}.json"
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([_fmt(v) for v in row])
        meta = {"kind": self.kind, "columns": self.columns, **self.metadata}
        json_path.write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")
        return csv_path, json_path


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def format_cell(mean: float, std: float, digits: int = 6) -> str:
    """Table cell as ``mean (std)``."""
    return f"{mean:.{digits}f} ({std:.{digits}f})"


def gaussian_pdf(x, mu, sigma):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-0.5 * ((x - mu) / sigma) ** 2) / (sigma * math.sqrt(2.0 * math.pi))


def pb_density_curves(mu, sigma, x_range=(-3.0, 3.0), samples: int = 201) -> AnalysisReport:
    """Gaussian pdf of each PB dimension over ``x_range``.

    ``mu``/``sigma`` are vectors (one sequence) or (N, P) matrices; rows are
    ``(sequence, dim, x, pdf)``.
    """
    mu = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    sigma = np.atleast_2d(np.asarray(sigma, dtype=np.float64))
    if mu.shape != sigma.shape:
        raise ValueError("mu and sigma shapes differ")
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    if samples < 2:
        raise ValueError("samples must be >= 2")
    xs = np.linspace(x_range[0], x_range[1], samples)
    rows = []
    for i in range(mu.shape[0]):
        for j in range(mu.shape[1]):
            pdf = gaussian_pdf(xs, mu[i, j], sigma[i, j])
            rows.extend([i, j, float(x), float(p)] for x, p in zip(xs, pdf))
    return AnalysisReport(
        "density",
        ["sequence", "dim", "x", "pdf"],
        rows,
        {"x_range": list(x_range), "samples": samples},
    )


def pb_pca_projection(
    params: ModelParams, samples_per_sequence: int, rng: RngStream, deterministic: bool = False
) -> AnalysisReport:
    """Sample PBs from every learned ``(mu, sigma)``, fit PCA on all samples, project to 2-D.

    A deterministic model contributes its learned means only.
    """
    mu, sigma = params.pb_mu, params.sigma
    N, P = mu.shape
    if deterministic:
        pts = mu.copy()
        labels = [(i, 0) for i in range(N)]
    else:
        eps = rng.normal((N, samples_per_sequence, P))
        pts = (mu[:, None, :] + sigma[:, None, :] * eps).reshape(-1, P)
        labels = [(i, k) for i in range(N) for k in range(samples_per_sequence)]
    basis = pca_fit(pts)
    proj = basis.project(pts, min(2, P))
    if proj.shape[1] < 2:
        proj = np.hstack([proj, np.zeros((proj.shape[0], 1))])
    rows = [[i, k, float(a), float(b)] for (i, k), (a, b) in zip(labels, proj)]
    return AnalysisReport(
        "pca",
        ["sequence", "sample", "pc1", "pc2"],
        rows,
        {
            "explained_variance": basis.explained_variance,
            "samples_per_sequence": 1 if deterministic else samples_per_sequence,
            "seed": rng.seed,
        },
    )


@dataclass(frozen=True)
class CorrelationGridSpec:
    sequence_index: int = 0
    axis_dims: tuple[int, int] = (0, 1)
    grid_points: int = 20
    span: float = 1.0

    def __post_init__(self):
        if self.grid_points < 2:
            raise ValueError("grid_points must be >= 2")
        if self.axis_dims[0] == self.axis_dims[1]:
            raise ValueError("axis_dims must be distinct")
        if self.span < 0:
            raise ValueError("span must be >= 0")


def correlation_grid(params: ModelParams, target, spec: CorrelationGridSpec, center=None):
    """Pearson r between generated and target sequences on a 2-D grid of means.

    Returns ``(r, degenerate, axis1_values, axis2_values)``; ``r[a, b]`` uses
    ``axis1_values[a]`` and ``axis2_values[b]``.
    """
    target = np.asarray(target, dtype=np.float64)
    P = params.pb_mu.shape[1]
    j1, j2 = spec.axis_dims
    if not (0 <= j1 < P and 0 <= j2 < P):
        raise ValueError(f"axis_dims {spec.axis_dims} out of range for pb_dim {P}")
    base = params.pb_mu[spec.sequence_index] if center is None else np.asarray(center, dtype=np.float64)
    g = spec.grid_points
    v1 = np.linspace(base[j1] - spec.span, base[j1] + spec.span, g)
    v2 = np.linspace(base[j2] - spec.span, base[j2] + spec.span, g)
    pbs = np.tile(base, (g * g, 1))
    pbs[:, j1] = np.repeat(v1, g)
    pbs[:, j2] = np.tile(v2, g)
    x = rollout(params, pbs, target.shape[0]).x_hat
    r = np.empty(g * g)
    degenerate = np.zeros(g * g, dtype=bool)
    for k in range(g * g):
        r[k], degenerate[k] = pearson_correlation(x[k], target)
    return r.reshape(g, g), degenerate.reshape(g, g), v1, v2


def correlation_landscape(params: ModelParams, target, spec: CorrelationGridSpec) -> AnalysisReport:
    """Correlation landscape around the learned mean of ``spec.sequence_index`` (sigma = 0)."""
    r, deg, v1, v2 = correlation_grid(params, target, spec)
    rows = []
    for a in range(len(v1)):
        for b in range(len(v2)):
            rows.append([a, b, float(v1[a]), float(v2[b]), float(r[a, b]), bool(deg[a, b])])
    return AnalysisReport(
        "landscape",
        ["row", "col", "mu_a", "mu_b", "r", "degenerate"],
        rows,
        {
            "sequence_index": spec.sequence_index,
            "axis_dims": list(spec.axis_dims),
            "grid_points": spec.grid_points,
            "span": spec.span,
            "smoothness": smoothness_metric(r),
        },
    )


def landscape_grid(report: AnalysisReport) -> np.ndarray:
    g = int(report.metadata["grid_points"])
    return report.column("r").reshape(g, g)


def smoothness_metric(grid) -> float:
    """Mean absolute difference across 4-neighbour edges of a grid (lower is smoother)."""
    if isinstance(grid, AnalysisReport):
        grid = landscape_grid(grid)
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] < 2 or g.shape[1] < 2:
        raise ValueError(f"grid must be at least 2x2, got shape {g.shape}")
    horiz = np.abs(np.diff(g, axis=1)).ravel()
    vert = np.abs(np.diff(g, axis=0)).ravel()
    return float(np.concatenate([horiz, vert]).mean())


def reconstruction_report(
    params: ModelParams,
    sequences,
    samples_per_sequence: int,
    rng: RngStream,
    deterministic: bool = False,
    sigma_zero: bool = False,
) -> AnalysisReport:
    """Closed-loop reconstruction loss of every training sequence from sampled PBs.

    Each sampled PB gives one summed-squared-error value against its source
    sequence; the metadata holds the mean and standard deviation over all
    samples.  Deterministic models (or ``sigma_zero``) use one PB per
    sequence, the learned mean.
    """
    sequences = [np.asarray(s, dtype=np.float64) for s in sequences]
    N, P = params.pb_mu.shape
    if len(sequences) != N:
        raise ValueError(f"{len(sequences)} sequences for {N} learned PB rows")
    single = deterministic or sigma_zero
    S = 1 if single else samples_per_sequence
    rows = []
    for i, seq in enumerate(sequences):
        if single:
            pbs = params.pb_mu[i][None]
        else:
            pbs = params.pb_mu[i] + params.sigma[i] * rng.normal((S, P))
        x = rollout(params, pbs, seq.shape[0]).x_hat
        losses = np.sum((x - seq[None]) ** 2, axis=(1, 2))
        rows.extend([i, k, float(v)] for k, v in enumerate(losses))
    losses = np.array([r[2] for r in rows])
    return AnalysisReport(
        "reconstruction",
        ["sequence", "sample", "loss"],
        rows,
        {
            "mean": float(losses.mean()),
            "std": float(losses.std()),
            "cell": format_cell(float(losses.mean()), float(losses.std())),
            "samples_per_sequence": S,
            "seed": rng.seed,
        },
    )


def recognition_trace_report(result) -> AnalysisReport:
    """Per-iteration recognition trace: ``s, mu..., sigma..., pb..., recon_loss, l_min, early_update``."""
    P = result.init_mu.shape[0]
    cols = (["s"] + [f"mu{j}" for j in range(P)] + [f"sigma{j}" for j in range(P)]
            + [f"pb{j}" for j in range(P)] + ["recon_loss", "l_min", "early_update"])
    rows = []
    for rec in result.trace:
        rows.append([rec.step, *map(float, rec.mu), *map(float, rec.sigma), *map(float, rec.pb),
                     rec.loss, rec.l_min, bool(rec.early_update)])
    return AnalysisReport("trace", cols, rows, {"best_mu": result.best_mu,
                                                "reconstruction_loss": result.reconstruction_loss})


def recognition_table(outcomes_by_mode: dict) -> AnalysisReport:
    """Recognition summary: one row per init mode with mean/std of both metrics."""
    from .recognition import summarize

    rows = []
    meta = {}
    for mode, outcomes in outcomes_by_mode.items():
        s = summarize(outcomes)
        rows.append([mode, s["recon_mean"], s["recon_std"], s["pred_mean"], s["pred_std"], s["n"]])
        meta[mode] = {
            "reconstruction": format_cell(s["recon_mean"], s["recon_std"], 5),
            "prediction": format_cell(s["pred_mean"], s["pred_std"], 5),
        }
    return AnalysisReport(
        "recognition",
        ["init", "recon_mean", "recon_std", "pred_mean", "pred_std", "n"],
        rows,
        {"cells": meta},
    )
