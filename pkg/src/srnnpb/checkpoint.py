"""Versioned single-file checkpoints.

Layout: the magic bytes ``SRNNPB\\0\\0``, an unsigned little-endian 64-bit
header length, a UTF-8 JSON header, then every parameter array as raw
little-endian float64 in the order listed by ``header["arrays"]``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .model import PARAM_FIELDS, ModelConfig, ModelParams

MAGIC = b"SRNNPB\0\0"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


def expected_shapes(config: ModelConfig, n_sequences: int) -> dict[str, tuple[int, ...]]:
    H, P, D = config.hidden_dim, config.pb_dim, config.input_dim
    return {
        "w_x": (4 * H, P + D),
        "w_h": (4 * H, H),
        "b": (4 * H,),
        "w_out": (D, H),
        "b_out": (D,),
        "pb_mu": (n_sequences, P),
        "pb_log_sigma": (n_sequences, P),
    }


def checkpoint_id(params: ModelParams, config: ModelConfig) -> str:
    """Short content hash of the arrays and model config (provenance excluded)."""
    h = hashlib.sha256(json.dumps(asdict(config), sort_keys=True).encode())
    for name in PARAM_FIELDS:
        h.update(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())
    return h.hexdigest()[:12]


def save_checkpoint(params: ModelParams, config: ModelConfig, path, normalization=None, provenance=None) -> str:
    """Write a checkpoint; returns its id."""
    params.check(config)
    header = {
        "format_version": FORMAT_VERSION,
        "config": asdict(config),
        "arrays": [[name, list(getattr(params, name).shape)] for name in PARAM_FIELDS],
        "normalization": normalization,
        "provenance": provenance or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in PARAM_FIELDS:
            fh.write(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())
    return checkpoint_id(params, config)


def read_header(path) -> dict:
    return _read(path)[0]


def load_checkpoint(path):
    """Return ``(params, config, header)``."""
    header, payload = _read(path)
    try:
        config = ModelConfig(**header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: bad model config: {exc}") from None
    declared = header.get("arrays", [])
    names = [a[0] for a in declared]
    if names != list(PARAM_FIELDS):
        raise CheckpointShapeError(f"{path}: array list {names} does not match {list(PARAM_FIELDS)}")
    mu_shape = declared[PARAM_FIELDS.index("pb_mu")][1]
    n_seq = int(mu_shape[0]) if mu_shape else 0
    want = expected_shapes(config, n_seq)
    arrays, pos = {}, 0
    for name, shape in declared:
        shape = tuple(int(s) for s in shape)
        if shape != want[name]:
            raise CheckpointShapeError(f"{path}: {name} declared {shape}, config implies {want[name]}")
        nbytes = 8 * int(np.prod(shape, dtype=np.int64))
        if pos + nbytes > len(payload):
            raise CheckpointTruncatedError(f"{path}: truncated while reading {name}")
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=nbytes // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - pos} trailing bytes")
    return ModelParams(**arrays), config, header


def _read(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc.strerror or exc}") from None
    if len(data) < len(MAGIC) + 8:
        raise CheckpointTruncatedError(f"{path}: file too short")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack_from("<Q", data, len(MAGIC))
    start = len(MAGIC) + 8
    if start + hlen > len(data):
        raise CheckpointTruncatedError(f"{path}: truncated header")
    try:
        header = json.loads(data[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header: {exc}") from None
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format_version {version!r}, this build reads {FORMAT_VERSION}")
    return header, data[start + hlen :]
