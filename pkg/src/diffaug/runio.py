"""Reading and writing run directories.

A run directory holds ``run.json`` (resolved config), ``history.csv`` and the
checkpoint files ``encoder.ckpt``, ``denoiser.ckpt`` and ``stats.ckpt``.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .config import RunConfig, from_dict
from .data import Standardizer
from .diffusion import Denoiser, init_denoiser, make_schedule
from .errors import ParseError
from .numerics import load_checkpoint, save_checkpoint, tree_leaves, tree_replace
from .trainer import Encoder, TrainedState, init_encoder

HISTORY_FIELDS = ("epoch", "stage", "loss", "wall_ms")


def save_encoder(path, enc: Encoder):
    meta = {
        "kind": "encoder",
        "trunk": list(enc.trunk.layer_spec),
        "z_dim": enc.z_dim,
        "norm_mode": enc.trunk.norm_mode,
    }
    save_checkpoint(path, tree_leaves(enc), meta)


def load_encoder(path) -> Encoder:
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "encoder":
        raise ParseError(f"{path}: not an encoder checkpoint")
    spec = meta["trunk"]
    template = init_encoder(spec[0], np.random.default_rng(0), spec, meta["z_dim"], meta["norm_mode"])
    return tree_replace(template, tensors)


def save_denoiser(path, den: Denoiser, schedule_args=None):
    meta = {
        "kind": "denoiser",
        "data_dim": den.data_dim,
        "cond_dim": den.cond_dim,
        "time_dim": den.time_dim,
        "mid_dim": den.blocks[0].layer_spec[1],
        "n_blocks": len(den.blocks),
        "norm_mode": den.blocks[0].norm_mode,
        "schedule": schedule_args,
    }
    save_checkpoint(path, tree_leaves(den), meta)


def load_denoiser(path):
    """Returns ``(denoiser, schedule)``; schedule is None if it was not stored."""
    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "denoiser":
        raise ParseError(f"{path}: not a denoiser checkpoint")
    template = init_denoiser(
        meta["data_dim"], meta["cond_dim"], np.random.default_rng(0),
        meta["time_dim"], meta["mid_dim"], meta["n_blocks"], meta["norm_mode"],
    )
    sched = make_schedule(*meta["schedule"]) if meta.get("schedule") else None
    return tree_replace(template, tensors), sched


def write_history(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for row in history:
            wall = "" if row.wall_ms is None else format(row.wall_ms, ".3f")
            w.writerow([row.epoch, row.stage, format(row.loss, ".17g"), wall])


def read_history(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def write_state(out_dir, state: TrainedState, config: RunConfig, prefix=""):
    """Checkpoints for the encoder, denoiser and input standardization."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_encoder(out / f"{prefix}encoder.ckpt", state.encoder)
    if state.denoiser is not None:
        d = config.diffusion
        save_denoiser(out / f"{prefix}denoiser.ckpt", state.denoiser, [d.T, d.beta_start, d.beta_end])
    if state.stats is not None and not prefix:
        save_checkpoint(out / "stats.ckpt", {"mean": state.stats.mean, "std": state.stats.std}, {"kind": "stats"})


def write_run(out_dir, state: TrainedState, config: RunConfig):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.json").write_text(config.to_json(), encoding="utf-8")
    write_history(out / "history.csv", state.history)
    write_state(out, state, config)


def load_run(run_dir):
    """Returns ``(config, encoder, denoiser_or_None, schedule_or_None, stats_or_None)``."""
    run = Path(run_dir)
    config = from_dict(RunConfig, json.loads((run / "run.json").read_text(encoding="utf-8")))
    enc = load_encoder(run / "encoder.ckpt")
    den, sched = (None, None)
    if (run / "denoiser.ckpt").exists():
        den, sched = load_denoiser(run / "denoiser.ckpt")
    stats = None
    if (run / "stats.ckpt").exists():
        tensors, _ = load_checkpoint(run / "stats.ckpt")
        stats = Standardizer(tensors["mean"], tensors["std"])
    return config, enc, den, sched, stats
