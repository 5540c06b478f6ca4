"""Command-line interface: ``srnnpb {train,generate,recognize,analyze,synth}``.

Settings resolve as built-in defaults < ``--paper-defaults`` profile <
``--config`` JSON file < explicit flags.  Exit codes: 0 success, 1 usage
error, 2 data or checkpoint error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis
from .checkpoint import CheckpointError, checkpoint_id, load_checkpoint, save_checkpoint
from .dataset import (
    DatasetError,
    Normalization,
    NovelPatternSpec,
    SequenceDataset,
    load_sequences,
    normalize,
    synthesize_novel_patterns,
    synthetic_sinusoids,
    write_sequence,
    write_sequences,
)
from .model import ModelConfig, rollout
from .numerics import RngStream
from .recognition import RecognitionConfig, run_recognition_experiment
from .training import DivergenceError, TrainConfig, train

log = logging.getLogger("srnnpb")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3

DEFAULTS = {
    "beta": 0.0,
    "deterministic": False,
    "epochs": 5000,
    "lr": 1e-3,
    "pb_dim": 2,
    "hidden": 32,
    "seed": 0,
    "normalize": "none",
    "recon_reduction": "sum",
    "checkpoint_every": 0,
    "clip_norm": None,
    "samples": None,  # generate: 1; pca and reconstruction: 100
    "sigma_zero": False,
    "init": "baseline",
    "trials": 10,
    "iters": 100,
    "rec_lr": 0.1,
    "observed_fraction": 0.8,
    "random_candidates": 10,
    "grid_points": 20,
    "span": 1.0,
    "axis_dims": [0, 1],
    "seq_index": 0,
    "x_range": [-3.0, 3.0],
    "density_samples": 201,
}

PAPER_DEFAULTS = {
    "pb_dim": 4,
    "hidden": 256,
    "epochs": 50000,
    "lr": 1e-3,
    "iters": 100,
    "rec_lr": 0.1,
    "observed_fraction": 0.8,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def default_workers() -> int:
    env = os.environ.get("SRNNPB_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"SRNNPB_WORKERS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    # option defaults stay None so resolve() can tell explicit flags apart
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file of settings (keys as flag names with underscores)")
    common.add_argument("--paper-defaults", action="store_true", default=None,
                        help="D_PB=4, hidden=256, 50000 epochs, lr 1e-3, recognition 100 iters at lr 0.1")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, help="worker processes (default: $SRNNPB_WORKERS or all cores)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="srnnpb", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", parents=[common], help="train a model on a directory of CSV sequences")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--history", help="loss-history CSV (default: <out>.loss.csv)")
    t.add_argument("--beta", type=float)
    t.add_argument("--deterministic", action="store_true", default=None)
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--pb-dim", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--normalize", choices=["none", "minmax_to_unit", "zscore"])
    t.add_argument("--recon-reduction", choices=["sum", "mean"])
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--clip-norm", type=float)

    g = sub.add_parser("generate", parents=[common], help="closed-loop generation from a checkpoint")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--out-dir", required=True)
    src = g.add_mutually_exclusive_group()
    src.add_argument("--seq-index", type=int)
    src.add_argument("--mu", type=_floats, help="explicit PB mean, comma-separated")
    g.add_argument("--samples", type=int)
    g.add_argument("--sigma-zero", action="store_true", default=None)
    g.add_argument("--length", type=int, help="steps to generate (default: training length)")
    g.add_argument("--raw", action="store_true", help="skip undoing the training normalization")

    r = sub.add_parser("recognize", parents=[common], help="recognize target sequences with frozen weights")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--targets", required=True)
    r.add_argument("--out-dir", required=True)
    r.add_argument("--init", choices=["baseline", "learned", "random"])
    r.add_argument("--trials", type=int)
    r.add_argument("--iters", type=int)
    r.add_argument("--lr", dest="rec_lr", type=float)
    r.add_argument("--observed-fraction", type=float)
    r.add_argument("--random-candidates", type=int)

    a = sub.add_parser("analyze", parents=[common], help="write an analysis report")
    a.add_argument("--ckpt", required=True)
    a.add_argument("--kind", required=True, choices=["density", "pca", "landscape", "reconstruction"])
    a.add_argument("--out-dir", required=True)
    a.add_argument("--data", help="training sequences (landscape, reconstruction)")
    a.add_argument("--samples", type=int)
    a.add_argument("--sigma-zero", action="store_true", default=None)
    a.add_argument("--seq-index", type=int)
    a.add_argument("--axis-dims", type=_ints)
    a.add_argument("--grid-points", type=int)
    a.add_argument("--span", type=float)
    a.add_argument("--x-range", type=_floats)
    a.add_argument("--density-samples", type=int)

    s = sub.add_parser("synth", parents=[common], help="write synthetic training or novel sequences")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--kind", choices=["sinusoids", "novel"], default="sinusoids")
    s.add_argument("--data", help="source sequences for --kind novel")
    s.add_argument("--count", type=int, default=8)
    s.add_argument("--dim", type=int, default=4)
    s.add_argument("--length", type=int, default=60)
    s.add_argument("--freq-range", type=_floats, default=[0.5, 1.5])
    s.add_argument("--pca-components", type=int, default=3)
    s.add_argument("--noise-std", type=float, default=0.05)
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, profile, config file and explicit flags."""
    cfg = dict(DEFAULTS)
    if args.paper_defaults:
        cfg.update(PAPER_DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise DatasetError(f"cannot read config: {exc.strerror}", args.config) from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: malformed JSON: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError(f"{args.config}: top level must be an object")
        unknown = sorted(set(loaded) - set(DEFAULTS) - {"workers", "paper_defaults"})
        if unknown:
            raise UsageError(f"{args.config}: unknown keys {unknown}")
        if loaded.pop("paper_defaults", False):
            cfg.update(PAPER_DEFAULTS)
        cfg.update(loaded)
    for key, value in vars(args).items():
        if value is not None and key not in ("config", "paper_defaults", "command"):
            cfg[key] = value
    cfg.setdefault("workers", None)
    if cfg["workers"] is None:
        cfg["workers"] = default_workers()
    return cfg


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = time.gmtime(int(epoch)) if epoch else time.gmtime()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", t)


def _load(path):
    params, config, header = load_checkpoint(path)
    norm = header.get("normalization")
    return params, config, header, (Normalization.from_dict(norm) if norm else None)


def _normalized(dataset: SequenceDataset, norm: Normalization | None) -> list[np.ndarray]:
    return [norm.apply(s) for s in dataset.sequences] if norm else list(dataset.sequences)


def cmd_train(cfg: dict) -> int:
    ds = normalize(load_sequences(cfg["data"]), cfg["normalize"])
    mcfg = ModelConfig(ds.input_dim, cfg["pb_dim"], cfg["hidden"], cfg["deterministic"], cfg["beta"])
    tcfg = TrainConfig(
        epochs=cfg["epochs"],
        learning_rate=cfg["lr"],
        beta=cfg["beta"],
        seed=cfg["seed"],
        checkpoint_every=cfg["checkpoint_every"],
        clip_norm=cfg["clip_norm"],
        recon_reduction=cfg["recon_reduction"],
    )
    out = Path(cfg["out"])
    norm = ds.normalization.to_dict() if ds.normalization else None

    def provenance(epoch, history):
        last = history[-1]
        return {
            "seed": tcfg.seed,
            "epochs_completed": epoch,
            "final_loss": {"recon": last.recon, "kl": last.kl, "total": last.total},
            "train_config": {k: getattr(tcfg, k) for k in tcfg.__dataclass_fields__},
            "sequence_names": ds.names,
            "sequence_lengths": ds.lengths,
            "columns": ds.columns,
            "created": _timestamp(),
        }

    def on_checkpoint(epoch, params, history):
        save_checkpoint(params, mcfg, out.with_name(f"{out.name}.epoch{epoch}"), norm, provenance(epoch, history))

    result = train(ds.sequences, mcfg, tcfg, on_checkpoint if tcfg.checkpoint_every else None)
    ckpt_id = save_checkpoint(result.params, mcfg, out, norm, provenance(tcfg.epochs, result.history))
    hist = Path(cfg.get("history") or out.with_name(out.name + ".loss.csv"))
    with open(hist, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "recon", "kl", "total"])
        for row in result.history_rows():
            w.writerow([row[0], *(repr(float(v)) for v in row[1:])])
    last = result.history[-1]
    print(f"{out} id={ckpt_id} recon={last.recon:.6g} kl={last.kl:.6g}")
    return EXIT_OK


def cmd_generate(cfg: dict) -> int:
    params, mcfg, header, norm = _load(cfg["ckpt"])
    prov = header.get("provenance", {})
    if cfg.get("mu") is not None:
        mu = np.asarray(cfg["mu"], dtype=np.float64)
        if mu.shape != (mcfg.pb_dim,):
            raise UsageError(f"--mu needs {mcfg.pb_dim} values, got {mu.size}")
        sigma = np.zeros(mcfg.pb_dim)
        idx = None
    else:
        idx = cfg["seq_index"]
        if not 0 <= idx < params.n_sequences:
            raise UsageError(f"--seq-index {idx} out of range [0, {params.n_sequences})")
        mu, sigma = params.pb_mu[idx], params.sigma[idx]
    if mcfg.deterministic or cfg["sigma_zero"]:
        sigma = np.zeros_like(sigma)
    length = cfg.get("length")
    if length is None:
        lengths = prov.get("sequence_lengths")
        if not lengths:
            raise UsageError("--length is required for this checkpoint")
        length = lengths[idx if idx is not None else 0]
    samples = 1 if cfg["samples"] is None else cfg["samples"]
    if length < 1 or samples < 1:
        raise UsageError("--length and --samples must be >= 1")
    rng = RngStream(cfg["seed"], 0)
    pbs = mu + sigma * rng.normal((samples, mcfg.pb_dim))
    x = rollout(params, pbs, length).x_hat
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    columns = prov.get("columns")
    for k in range(samples):
        seq = x[k] if (norm is None or cfg.get("raw")) else norm.invert(x[k])
        write_sequence(out / f"generated-{k:03d}.csv", seq, columns)
    print(f"wrote {samples} sequences to {out}")
    return EXIT_OK


def cmd_recognize(cfg: dict) -> int:
    params, mcfg, header, norm = _load(cfg["ckpt"])
    targets = load_sequences(cfg["targets"])
    if targets.input_dim != mcfg.input_dim:
        raise DatasetError(f"targets have {targets.input_dim} dims, model expects {mcfg.input_dim}", cfg["targets"])
    rcfg = RecognitionConfig(
        iterations=cfg["iters"],
        learning_rate=cfg["rec_lr"],
        observed_fraction=cfg["observed_fraction"],
        init_mode=cfg["init"],
        random_candidates=cfg["random_candidates"],
        trials=cfg["trials"],
        seed=cfg["seed"],
    )
    ckpt_id = checkpoint_id(params, mcfg)
    outcomes = run_recognition_experiment(
        params, _normalized(targets, norm), rcfg, mcfg.deterministic, cfg["workers"]
    )
    summary = analysis.recognition_table({rcfg.init_mode: outcomes})
    rows = [[targets.names[o.pattern], o.pattern, o.trial, o.reconstruction_loss, o.prediction_error]
            for o in outcomes]
    report = analysis.AnalysisReport(
        "recognition",
        ["target", "pattern", "trial", "reconstruction_loss", "prediction_error"],
        rows,
        {
            "checkpoint_id": ckpt_id,
            "seed": rcfg.seed,
            "config": {k: getattr(rcfg, k) for k in rcfg.__dataclass_fields__},
            "summary": dict(zip(summary.columns, summary.rows[0])),
            "cells": summary.metadata["cells"],
        },
    )
    out = Path(cfg["out_dir"])
    report.save(out, ckpt_id)
    trace_rows, trace_cols = [], None
    for o in outcomes:
        tr = analysis.recognition_trace_report(o.result)
        trace_cols = ["pattern", "trial"] + tr.columns
        trace_rows.extend([o.pattern, o.trial, *row] for row in tr.rows)
    analysis.AnalysisReport("trace", trace_cols, trace_rows, {"checkpoint_id": ckpt_id}).save(out, ckpt_id)
    cell = summary.metadata["cells"][rcfg.init_mode]
    print(f"{rcfg.init_mode}: reconstruction {cell['reconstruction']} prediction {cell['prediction']}")
    return EXIT_OK


def cmd_analyze(cfg: dict) -> int:
    params, mcfg, header, norm = _load(cfg["ckpt"])
    ckpt_id = checkpoint_id(params, mcfg)
    kind = cfg["kind"]
    rng = RngStream(cfg["seed"], 0)
    samples = 100 if cfg["samples"] is None else cfg["samples"]
    if kind == "density":
        report = analysis.pb_density_curves(
            params.pb_mu, params.sigma, tuple(cfg["x_range"]), cfg["density_samples"]
        )
    elif kind == "pca":
        report = analysis.pb_pca_projection(params, samples, rng, mcfg.deterministic)
    else:
        if not cfg.get("data"):
            raise UsageError(f"--data is required for --kind {kind}")
        seqs = _normalized(load_sequences(cfg["data"]), norm)
        if kind == "landscape":
            spec = analysis.CorrelationGridSpec(
                cfg["seq_index"], tuple(cfg["axis_dims"]), cfg["grid_points"], cfg["span"]
            )
            if not 0 <= spec.sequence_index < len(seqs):
                raise UsageError(f"--seq-index {spec.sequence_index} out of range")
            report = analysis.correlation_landscape(params, seqs[spec.sequence_index], spec)
        else:
            report = analysis.reconstruction_report(
                params, seqs, samples, rng, mcfg.deterministic, cfg["sigma_zero"]
            )
    report.metadata.update({"checkpoint_id": ckpt_id, "seed": cfg["seed"]})
    csv_path, _ = report.save(cfg["out_dir"], ckpt_id)
    print(csv_path)
    return EXIT_OK


def cmd_synth(cfg: dict) -> int:
    out = Path(cfg["out_dir"])
    if cfg["kind"] == "sinusoids":
        lo, hi = cfg["freq_range"]
        ds = synthetic_sinusoids(cfg["count"], cfg["dim"], cfg["length"], cfg["seed"], freq_range=(lo, hi))
    else:
        if not cfg.get("data"):
            raise UsageError("--data is required for --kind novel")
        src = load_sequences(cfg["data"])
        spec = NovelPatternSpec(cfg["count"], cfg["pca_components"], cfg["noise_std"], seed=cfg["seed"])
        pats = synthesize_novel_patterns(src, spec)
        ds = SequenceDataset(pats, [f"novel{k:02d}" for k in range(len(pats))], src.columns)
    write_sequences(ds, out)
    print(f"wrote {len(ds)} sequences to {out}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "generate": cmd_generate,
    "recognize": cmd_recognize,
    "analyze": cmd_analyze,
    "synth": cmd_synth,
}


def run_cli(argv=None) -> int:
    try:
        try:
            args = build_parser().parse_args(argv)
        except SystemExit as exc:  # --help
            return int(exc.code or 0)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"srnnpb: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CheckpointError) as exc:
        print(f"srnnpb: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"srnnpb: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        # invalid settings rejected by a config dataclass
        print(f"srnnpb: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run_cli())
