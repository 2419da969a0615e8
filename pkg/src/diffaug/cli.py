"""Command line: ``train``, ``generate``, ``eval`` and ``sweep-lambda``.

Progress goes to stderr; results are printed to stdout as ``key=value`` lines.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config, validate
from .data import Dataset, gen_gaussian_mixture, load_csv, split_indices
from .diffusion import sample
from .errors import (
    ConfigError,
    DiffAugError,
    DimensionError,
    ParameterError,
    ParseError,
    ProtocolError,
    StructureError,
)
from .evaluate import ProbeConfig, cosine_similarity_profile, kmeans_accuracy, linear_probe
from .runio import load_run, write_run, write_state
from .trainer import StagePlan, encode, run_schedule

log = logging.getLogger("diffaug")

DEFAULT_LAMBDAS = (0.0, 0.05, 0.1, 0.15, 0.3, 0.5, 1.0)
SWEEP_FIELDS = ("lambda", "seed", "probe_accuracy", "kmeans_accuracy", "status", "error", "run_dir")
USAGE_ERRORS = (ConfigError, ParseError, StructureError, DimensionError, ProtocolError, ParameterError)


class UsageError(DiffAugError):
    """Bad command-line input; maps to exit code 2."""


def load_dataset(cfg: RunConfig) -> Dataset:
    """The dataset named by ``cfg.data``: a CSV path or the synthetic mixture."""
    if cfg.data.path is not None:
        path = Path(cfg.data.path)
        if not path.is_file():
            raise ConfigError(f"data file not found: {path}", "data.path")
        return load_csv(path)
    s = cfg.data.synthetic
    return gen_gaussian_mixture(s.k, s.d, s.n, s.separation, s.seed)


def embed(enc, stats, x, space="z"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != enc.in_dim:
        raise DimensionError(f"data has {x.shape[1]} features, encoder expects {enc.in_dim}")
    y, z = encode(enc, stats.apply(x) if stats is not None else x)
    return z if space == "z" else y


def score_embeddings(emb, labels, cfg: RunConfig):
    """Linear probe on a train/test split plus k-means accuracy on all rows."""
    if labels is None:
        raise ProtocolError("evaluation needs labeled data (a 'label' column)")
    ev = cfg.eval
    tr, te = split_indices(len(labels), ev.train_fraction, ev.probe_seed)
    probe = linear_probe(emb[tr], labels[tr], emb[te], labels[te],
                         ProbeConfig(kind=ev.probe_kind, seed=ev.probe_seed))
    k = np.unique(labels).size
    km = kmeans_accuracy(emb, labels, k, seed=ev.probe_seed, restarts=ev.kmeans_restarts)
    return probe, km


def train_run(cfg: RunConfig, out_dir) -> Path:
    """Train with ``cfg`` and write a self-describing run directory."""
    validate(cfg)
    ds = load_dataset(cfg)
    out = Path(out_dir)
    every = cfg.trainer.checkpoint_every

    def on_epoch(state, row):
        log.info("epoch %d stage %s loss %.6g", row.epoch, row.stage, row.loss)
        if every and row.epoch % every == 0:
            write_state(out / "checkpoints" / f"epoch_{row.epoch:05d}", state, cfg)

    state = run_schedule(StagePlan.from_config(cfg), ds.unlabeled().x, cfg, on_epoch=on_epoch)
    write_run(out, state, replace(cfg, out_dir=str(out)))
    return out


def _parse_floats(text, flag):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated numbers, got {text!r}") from None


def _parse_ints(text, flag):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{flag}: expected comma-separated integers, got {text!r}") from None


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "data", None):
        cfg = replace(cfg, data=replace(cfg.data, path=args.data))
    if getattr(args, "out", None):
        cfg = replace(cfg, out_dir=args.out)
    return cfg


def cmd_train(args):
    cfg = _resolve_config(args)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = train_run(cfg, cfg.out_dir)
    print(f"run_dir={out}")
    print(f"seed={cfg.seed}")
    return 0


def cmd_generate(args):
    run = Path(args.run_dir)
    cfg, enc, den, sched, stats = load_run(run)
    if den is None or sched is None:
        raise UsageError(f"{run}: no denoiser checkpoint")
    if not args.data:
        raise UsageError("generate needs --data")
    n_per = args.n_per_input
    if n_per < 0:
        raise UsageError("--n-per-input must be >= 0")
    ds = load_csv(args.data)
    z = embed(enc, stats, ds.x, "z")
    seed = cfg.seed if args.seed is None else args.seed
    rng = np.random.default_rng([seed, 7])
    source = np.repeat(np.arange(len(ds)), n_per)
    gen = np.empty((0, ds.dim))
    if source.size:
        gen = sample(z[source], den, sched, rng)
        if stats is not None:
            gen = stats.invert(gen)
    out = Path(args.out) if args.out else run / "generated.csv"
    names = ds.feature_names or tuple(f"x{i}" for i in range(ds.dim))
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("source", *names))
        for i, row in zip(source, gen):
            w.writerow([int(i), *(format(v, ".17g") for v in row)])
    print(f"output={out}")
    print(f"rows={source.size}")
    print(f"seed={seed}")
    return 0


def read_generated(path):
    """Source indices and features of a file written by ``generate``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "source":
        raise ParseError(f"{path}: not a generated-samples file")
    body = rows[1:]
    src = np.array([int(r[0]) for r in body], dtype=np.int64)
    x = np.array([[float(v) for v in r[1:]] for r in body], dtype=np.float64).reshape(len(body), len(rows[0]) - 1)
    return src, x


def cmd_eval(args):
    run = Path(args.run_dir)
    cfg, enc, _, _, stats = load_run(run)
    if not args.data:
        raise UsageError("eval needs --data")
    ds = load_csv(args.data)
    if ds.labels is None:
        raise ProtocolError(f"{args.data}: evaluation needs a 'label' column")
    emb = embed(enc, stats, ds.x, cfg.eval.space)
    probe, km = score_embeddings(emb, ds.labels, cfg)
    results = {
        "seed": cfg.seed,
        "space": cfg.eval.space,
        "probe_kind": probe.probe_kind,
        "probe_accuracy": probe.accuracy,
        "n_train": probe.n_train,
        "n_test": probe.n_test,
        "kmeans_accuracy": km,
    }
    gen_path = run / "generated.csv"
    if gen_path.exists():
        src, gx = read_generated(gen_path)
        if src.size and src.max() < len(ds) and gx.shape[1] == ds.dim:
            profile = cosine_similarity_profile(emb[src], embed(enc, stats, gx, cfg.eval.space))
            profile.to_csv(run / "cosine_profile.csv")
            results["cosine_mean"] = profile.mean
            results["cosine_std"] = profile.std
        else:
            log.warning("%s does not match the evaluation data; cosine profile skipped", gen_path)
    out = Path(args.out) if args.out else run / "report.csv"
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("metric", "value"))
        for key, val in results.items():
            w.writerow((key, format(val, ".17g") if isinstance(val, float) else val))
    for key, val in results.items():
        print(f"{key}={val}")
    print(f"report={out}")
    return 0


def run_cell(cfg: RunConfig, lam, seed, out_dir):
    """Train and evaluate one (λ, seed) cell; failures are returned, not raised."""
    row = {"lambda": lam, "seed": seed, "probe_accuracy": "", "kmeans_accuracy": "",
           "status": "ok", "error": "", "run_dir": str(out_dir)}
    try:
        cell = replace(cfg, seed=seed, trainer=replace(cfg.trainer, lam=lam), out_dir=str(out_dir))
        train_run(cell, out_dir)
        _, enc, _, _, stats = load_run(out_dir)
        ds = load_dataset(cell)
        probe, km = score_embeddings(embed(enc, stats, ds.x, cell.eval.space), ds.labels, cell)
        row["probe_accuracy"], row["kmeans_accuracy"] = probe.accuracy, km
    except DiffAugError as exc:
        row["status"], row["error"] = "failed", str(exc)
    return row


def sweep(cfg: RunConfig, lambdas, seeds, out_dir, workers=1):
    """One row per (λ, seed), λ-major. Cells run in up to ``workers`` processes."""
    for lam in lambdas:
        if not 0.0 <= lam <= 1.0:
            raise ConfigError(f"lambda {lam} outside [0, 1]", "trainer.lam")
    out = Path(out_dir)
    jobs = [(cfg, lam, s, out / f"lam_{lam:g}_seed_{s}") for lam in lambdas for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_cell, *zip(*jobs)))
    else:
        rows = [run_cell(*job) for job in jobs]
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, SWEEP_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: format(v, ".17g") if isinstance(v, float) else v for k, v in row.items()})
    return rows


def thread_cap():
    raw = os.environ.get("DIFFAUG_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"DIFFAUG_THREADS must be an integer, got {raw!r}") from None
    return max(1, n)


def cmd_sweep(args):
    cfg = _resolve_config(args)
    validate(cfg)
    lambdas = _parse_floats(args.lambdas, "--lambdas") if args.lambdas else list(DEFAULT_LAMBDAS)
    seeds = _parse_ints(args.seed, "--seed") if args.seed else [cfg.seed]
    rows = sweep(cfg, lambdas, seeds, cfg.out_dir, thread_cap())
    for row in rows:
        acc = row["probe_accuracy"]
        print(f"lambda={row['lambda']:g} seed={row['seed']} status={row['status']} probe_accuracy={acc}")
    print(f"sweep={Path(cfg.out_dir) / 'sweep.csv'}")
    return 1 if any(r["status"] != "ok" for r in rows) else 0


def build_parser():
    p = argparse.ArgumentParser(prog="diffaug", description="Contrastive encoder with diffusion-generated positives.")
    p.add_argument("-v", "--verbose", action="store_true", help="per-epoch progress on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train an encoder and denoiser")
    t.add_argument("--config", help="JSON run config (defaults apply to missing keys)")
    t.add_argument("--data", help="CSV training data; overrides data.path")
    t.add_argument("--out", help="run directory; overrides out_dir")
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    g = sub.add_parser("generate", help="sample positives for each input row")
    g.add_argument("run_dir")
    g.add_argument("--data", help="input CSV")
    g.add_argument("--n-per-input", type=int, default=1)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="output CSV (default RUN_DIR/generated.csv)")
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("eval", help="linear probe, k-means and cosine profile")
    e.add_argument("run_dir")
    e.add_argument("--data", help="labeled CSV")
    e.add_argument("--out", help="report CSV (default RUN_DIR/report.csv)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep-lambda", help="train and evaluate over a λ grid")
    s.add_argument("--config")
    s.add_argument("--data")
    s.add_argument("--out")
    s.add_argument("--lambdas", help="comma-separated, default " + ",".join(f"{v:g}" for v in DEFAULT_LAMBDAS))
    s.add_argument("--seed", help="comma-separated seeds (default: config seed)")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, *USAGE_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 2
    except DiffAugError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
