"""Evaluation protocols: linear probe, k-means clustering accuracy, cosine profiles."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import split_indices
from .errors import DimensionError, NumericError, ParameterError, ProtocolError


@dataclass(frozen=True)
class ProbeConfig:
    kind: str = "logistic"  # or "hinge"
    iterations: int = 2000
    step: float = 0.1
    l2: float = 1e-4
    seed: int = 0


@dataclass(frozen=True)
class ProbeReport:
    accuracy: float
    n_train: int
    n_test: int
    seed: int
    probe_kind: str
    correct: int = 0

    def as_lines(self):
        return [f"probe_{k}={v}" for k, v in vars(self).items()]


def _finite(x, name):
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise NumericError(f"{name} contains non-finite values")
    return x


def _logistic_grad(w, b, x, onehot, l2):
    logits = x @ w + b
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    r = (p - onehot) / x.shape[0]
    return x.T @ r + l2 * w, r.sum(axis=0)


def _hinge_grad(w, b, x, labels, l2):
    # Crammer-Singer multiclass hinge, subgradient
    n = x.shape[0]
    scores = x @ w + b
    true = scores[np.arange(n), labels]
    margins = scores - true[:, None] + 1.0
    margins[np.arange(n), labels] = -np.inf
    worst = margins.argmax(axis=1)
    active = margins[np.arange(n), worst] > 0
    r = np.zeros_like(scores)
    r[np.arange(n)[active], worst[active]] += 1.0
    r[np.arange(n)[active], labels[active]] -= 1.0
    r /= n
    return x.T @ r + l2 * w, r.sum(axis=0)


def linear_probe(train_emb, train_labels, test_emb, test_labels, config: ProbeConfig | None = None) -> ProbeReport:
    """Fit a linear classifier on frozen embeddings by full-batch gradient descent.

    Embeddings are centred and divided by one global scale (fitted on train),
    which keeps the fit equivariant under rotations of the embedding space.
    """
    cfg = config or ProbeConfig()
    if cfg.kind not in ("logistic", "hinge"):
        raise ParameterError(f"unknown probe kind {cfg.kind!r}")
    xtr = _finite(train_emb, "train embeddings")
    xte = _finite(test_emb, "test embeddings")
    ytr = np.asarray(train_labels, dtype=np.int64)
    yte = np.asarray(test_labels, dtype=np.int64)
    if xtr.shape[0] != ytr.shape[0] or xte.shape[0] != yte.shape[0]:
        raise DimensionError("embeddings and labels disagree in length")
    if xtr.shape[1] != xte.shape[1]:
        raise DimensionError("train and test embeddings differ in width")
    classes = np.unique(ytr)
    if classes.size < 2:
        raise ProtocolError("linear probe needs at least two classes in the training set")

    mu = xtr.mean(axis=0)
    scale = np.sqrt(((xtr - mu) ** 2).sum(axis=1).mean()) or 1.0
    xtr = (xtr - mu) / scale
    xte = (xte - mu) / scale

    n_cls = int(max(ytr.max(), yte.max())) + 1
    w = np.zeros((xtr.shape[1], n_cls))
    b = np.zeros(n_cls)
    onehot = np.eye(n_cls)[ytr]
    for _ in range(cfg.iterations):
        if cfg.kind == "logistic":
            gw, gb = _logistic_grad(w, b, xtr, onehot, cfg.l2)
        else:
            gw, gb = _hinge_grad(w, b, xtr, ytr, cfg.l2)
        w -= cfg.step * gw
        b -= cfg.step * gb
    pred = (xte @ w + b).argmax(axis=1)
    correct = int((pred == yte).sum())
    return ProbeReport(correct / yte.shape[0], xtr.shape[0], xte.shape[0], cfg.seed, cfg.kind, correct)


def probe_over_splits(emb, labels, seeds, train_fraction=0.9, config: ProbeConfig | None = None):
    """Mean probe accuracy over several seeded splits, plus the per-split reports."""
    cfg = config or ProbeConfig()
    emb = np.asarray(emb, dtype=np.float64)
    labels = np.asarray(labels)
    reports = []
    for s in seeds:
        tr, te = split_indices(len(labels), train_fraction, s)
        reports.append(linear_probe(emb[tr], labels[tr], emb[te], labels[te], replace(cfg, seed=s)))
    return float(np.mean([r.accuracy for r in reports])), reports


def _kmeans_pp(x, k, rng):
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def lloyd(x, k, rng, max_iter=300, tol=1e-10):
    """Single k-means run from k-means++ seeding. Returns (assignments, inertia)."""
    centers = _kmeans_pp(x, k, rng)
    assign = None
    for _ in range(max_iter):
        d2 = ((x[:, None, :] - centers[None]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        moved = 0.0
        for j in range(k):
            members = x[assign == j]
            if len(members):
                new_c = members.mean(axis=0)
                moved = max(moved, float(((new_c - centers[j]) ** 2).sum()))
                centers[j] = new_c
        if moved < tol:
            break
    d2 = ((x[:, None, :] - centers[None]) ** 2).sum(axis=2)
    assign = d2.argmin(axis=1)
    return assign, float(d2[np.arange(len(x)), assign].sum())


def matched_accuracy(assign, labels):
    """Accuracy after the cluster→label mapping that maximizes agreement."""
    assign = np.asarray(assign)
    labels = np.asarray(labels)
    clusters, a_idx = np.unique(assign, return_inverse=True)
    classes, l_idx = np.unique(labels, return_inverse=True)
    counts = np.zeros((clusters.size, classes.size), dtype=np.int64)
    np.add.at(counts, (a_idx, l_idx), 1)
    rows, cols = linear_sum_assignment(counts, maximize=True)
    return counts[rows, cols].sum() / labels.size


def kmeans_accuracy(emb, labels, k, seed=0, restarts=20):
    """Best-inertia k-means over ``restarts`` runs, scored with optimal label matching."""
    x = _finite(emb, "embeddings")
    if k < 1 or x.shape[0] < k:
        raise ParameterError(f"need 1 <= k <= n, got k={k}, n={x.shape[0]}")
    best = None
    for r in range(restarts):
        assign, inertia = lloyd(x, k, np.random.default_rng([seed, r]))
        if best is None or inertia < best[1]:
            best = (assign, inertia)
    return matched_accuracy(best[0], labels)


@dataclass(frozen=True, eq=False)
class CosineProfile:
    edges: np.ndarray
    counts: np.ndarray
    mean: float
    std: float
    similarities: np.ndarray

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_left", "bin_right", "count"])
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
                w.writerow([format(lo, ".17g"), format(hi, ".17g"), int(c)])


def cosine_similarity_profile(orig_emb, aug_emb, bins=50) -> CosineProfile:
    a = _finite(np.atleast_2d(orig_emb), "original embeddings")
    b = _finite(np.atleast_2d(aug_emb), "augmented embeddings")
    if a.shape != b.shape:
        raise DimensionError(f"paired embeddings differ in shape: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    for name, norms in (("original", na), ("augmented", nb)):
        zero = np.flatnonzero(norms == 0)
        if zero.size:
            raise NumericError(f"{name} embedding row {int(zero[0])} has zero norm")
    sims = np.clip((a * b).sum(axis=1) / (na * nb), -1.0, 1.0)
    counts, edges = np.histogram(sims, bins=bins, range=(-1.0, 1.0))
    return CosineProfile(edges, counts, float(sims.mean()), float(sims.std()), sims)
