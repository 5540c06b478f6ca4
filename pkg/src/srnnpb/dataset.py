"""Sequence datasets: CSV I/O, normalization and synthetic patterns.

CSV layout: one file per sequence, a header row naming the dimensions,
then one row per time step.  A directory is read in lexicographic file
order so sequence indices are stable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import RngStream, pca_fit

# joint order of the Pepper robot recordings
PEPPER_JOINTS = (
    "HeadPitch", "HeadYaw", "HipPitch", "HipRoll", "KneePitch",
    "LElbowRoll", "LElbowYaw", "LHand", "LShoulderPitch", "LShoulderRoll", "LWristYaw",
    "RElbowRoll", "RElbowYaw", "RHand", "RShoulderPitch", "RShoulderRoll", "RWristYaw",
)


class DatasetError(ValueError):
    """Base class for data problems; carries the offending file and line."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class MissingPathError(DatasetError):
    pass


class EmptyFileError(DatasetError):
    pass


class RaggedRowError(DatasetError):
    pass


class NonNumericError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class EmptyDatasetError(DatasetError):
    pass


@dataclass
class Normalization:
    mode: str  # "minmax_to_unit" or "zscore"
    offset: np.ndarray
    scale: np.ndarray

    def apply(self, seq):
        return (np.asarray(seq, dtype=np.float64) - self.offset) / self.scale

    def invert(self, seq):
        return np.asarray(seq, dtype=np.float64) * self.scale + self.offset

    def to_dict(self):
        return {"mode": self.mode, "offset": self.offset.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["mode"], np.asarray(d["offset"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64))


@dataclass
class SequenceDataset:
    sequences: list[np.ndarray]
    names: list[str]
    columns: list[str] = field(default_factory=list)
    normalization: Normalization | None = None

    def __post_init__(self):
        if len(self.sequences) != len(self.names):
            raise ValueError("one name per sequence required")
        dims = {s.shape[1] for s in self.sequences}
        if len(dims) > 1:
            raise DimensionMismatchError(f"sequences disagree on dimensionality: {sorted(dims)}")
        for name, s in zip(self.names, self.sequences):
            if s.shape[0] < 2:
                raise DatasetError(f"sequence {name!r} has fewer than 2 steps")
            if not np.all(np.isfinite(s)):
                raise DatasetError(f"sequence {name!r} has non-finite values")
        if not self.columns and self.sequences:
            self.columns = [f"x{j}" for j in range(self.input_dim)]

    def __len__(self):
        return len(self.sequences)

    @property
    def input_dim(self) -> int:
        return self.sequences[0].shape[1]

    @property
    def lengths(self) -> list[int]:
        return [s.shape[0] for s in self.sequences]

    def frames(self) -> np.ndarray:
        return np.concatenate(self.sequences, axis=0)


def _read_csv(path: Path):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise MissingPathError(str(exc), path) from None
    rows = list(csv.reader(text.splitlines()))
    rows = [(i + 1, r) for i, r in enumerate(rows) if any(cell.strip() for cell in r)]
    if len(rows) < 2:
        raise EmptyFileError("no header and data rows", path)
    _, header = rows[0]
    header = [h.strip() for h in header]
    width = len(header)
    values = []
    for lineno, row in rows[1:]:
        if len(row) != width:
            raise RaggedRowError(f"expected {width} columns, found {len(row)}", path, lineno)
        try:
            values.append([float(cell) for cell in row])
        except ValueError:
            bad = next(c for c in row if not _is_float(c))
            raise NonNumericError(f"non-numeric cell {bad!r}", path, lineno) from None
    arr = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NonNumericError("non-finite value", path)
    return header, arr


def _is_float(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_sequences(path) -> SequenceDataset:
    """Load a directory of ``*.csv`` files (or a single file), one sequence each."""
    path = Path(path)
    if not path.exists():
        raise MissingPathError("path does not exist", path)
    files = sorted(path.glob("*.csv")) if path.is_dir() else [path]
    if not files:
        raise EmptyDatasetError("no .csv files found", path)
    seqs, names, columns = [], [], None
    for f in files:
        header, arr = _read_csv(f)
        if columns is None:
            columns = header
        elif len(header) != len(columns):
            raise DimensionMismatchError(
                f"{len(header)} columns, first file has {len(columns)}", f, 1
            )
        if arr.shape[0] < 2:
            raise DatasetError("sequence shorter than 2 steps", f)
        seqs.append(arr)
        names.append(f.stem)
    return SequenceDataset(seqs, names, list(columns))


def write_sequence(path, seq, columns=None) -> None:
    seq = np.asarray(seq, dtype=np.float64)
    columns = list(columns) if columns else [f"x{j}" for j in range(seq.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in seq:
            w.writerow([repr(float(v)) for v in row])


def write_sequences(dataset: SequenceDataset, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for name, seq in zip(dataset.names, dataset.sequences):
        p = directory / f"{name}.csv"
        write_sequence(p, seq, dataset.columns)
        out.append(p)
    return out


def normalize(dataset: SequenceDataset, mode: str = "none") -> SequenceDataset:
    """Per-dimension normalization over pooled frames.

    ``mode`` is ``none``, ``minmax_to_unit`` (maps to [0, 1]) or ``zscore``.
    The returned dataset carries the metadata needed by :func:`denormalize`.
    """
    if mode == "none":
        return replace(dataset, sequences=[s.copy() for s in dataset.sequences], normalization=None)
    frames = dataset.frames()
    if mode == "minmax_to_unit":
        lo, hi = frames.min(axis=0), frames.max(axis=0)
        span = hi - lo
        flat = np.flatnonzero(span == 0)
        if flat.size:
            raise DatasetError(f"dimension {int(flat[0])} ({dataset.columns[flat[0]]}) has zero range")
        norm = Normalization(mode, lo, span)
    elif mode == "zscore":
        mean, std = frames.mean(axis=0), frames.std(axis=0)
        std = np.where(std == 0, 1.0, std)
        norm = Normalization(mode, mean, std)
    else:
        raise ValueError(f"unknown normalization mode {mode!r}")
    return replace(dataset, sequences=[norm.apply(s) for s in dataset.sequences], normalization=norm)


def denormalize(dataset: SequenceDataset) -> SequenceDataset:
    norm = dataset.normalization
    if norm is None:
        return dataset
    return replace(dataset, sequences=[norm.invert(s) for s in dataset.sequences], normalization=None)


@dataclass(frozen=True)
class NovelPatternSpec:
    count: int = 10
    pca_components: int = 3
    noise_std: float = 0.05
    scale: float = 1.1
    shift: float | tuple = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.pca_components < 1:
            raise ValueError("pca_components must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def synthesize_novel_patterns(dataset: SequenceDataset, spec: NovelPatternSpec) -> list[np.ndarray]:
    """Perturbed low-rank reconstructions of training sequences.

    Frames of every training sequence are pooled for PCA.  Pattern ``k`` is
    built from source sequence ``(offset + k) mod N`` (``offset`` drawn from
    the seed): its frames are projected on the top components, reconstructed,
    then mapped through ``scale * x + shift`` plus white Gaussian noise.
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("dataset is empty")
    if spec.pca_components > dataset.input_dim:
        raise ValueError(
            f"pca_components={spec.pca_components} exceeds input_dim={dataset.input_dim}"
        )
    basis = pca_fit(dataset.frames())
    rng = RngStream(spec.seed, 0)
    offset = int(rng.uniform(0, 1, 1)[0] * len(dataset))
    shift = np.broadcast_to(np.asarray(spec.shift, dtype=np.float64), (dataset.input_dim,))
    patterns = []
    for k in range(spec.count):
        src = dataset.sequences[(offset + k) % len(dataset)]
        low = basis.reconstruct(basis.project(src, spec.pca_components))
        noise = rng.normal(src.shape) * spec.noise_std
        patterns.append(spec.scale * low + shift + noise)
    return patterns


def synthetic_sinusoids(
    n: int = 8,
    dim: int = 4,
    length: int = 60,
    seed: int = 0,
    components: int = 2,
    freq_range: tuple[float, float] = (0.5, 2.5),
) -> SequenceDataset:
    """Smooth superposed-sinusoid trajectories for desk-scale experiments.

    Each dimension of each sequence is a sum of ``components`` sinusoids
    with random frequency (0.5 to 2.5 cycles over the sequence), phase and
    amplitude, so values stay roughly within [-1, 1].
    """
    rng = RngStream(seed, 0)
    t = np.arange(length) / length
    seqs = []
    for _ in range(n):
        freq = rng.uniform(freq_range[0], freq_range[1], (components, dim))
        phase = rng.uniform(0.0, 2.0 * math.pi, (components, dim))
        amp = rng.uniform(0.2, 0.5, (components, dim))
        x = np.zeros((length, dim))
        for c in range(components):
            x += amp[c] * np.sin(2.0 * math.pi * freq[c] * t[:, None] + phase[c])
        seqs.append(x)
    return SequenceDataset(seqs, [f"seq{i:02d}" for i in range(n)], [f"x{j}" for j in range(dim)])
