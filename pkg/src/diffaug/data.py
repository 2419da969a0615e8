"""Datasets: synthetic generators, CSV interchange, splits and standardization."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ParameterError, ParseError, StructureError
from .numerics import as_tensor

LABEL_COLUMN = "label"


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray
    labels: np.ndarray | None = None
    feature_names: tuple | None = None

    def __post_init__(self):
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (self.x.shape[0],):
                raise StructureError(f"{labels.shape[0]} labels for {self.x.shape[0]} rows")
            if labels.size and labels.min() < 0:
                raise ParseError("labels must be nonnegative integers")

    def __len__(self):
        return self.x.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]

    def unlabeled(self):
        """The view the training path consumes: features only."""
        return replace(self, labels=None)

    def subset(self, idx):
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.x[idx], labels, self.feature_names)


def gen_gaussian_mixture(k, d, n, separation, seed) -> Dataset:
    """k unit-covariance Gaussian blobs centred at separation × (random unit vectors).

    Labels are balanced: row i belongs to cluster ``i % k`` before shuffling.
    """
    if k < 1 or d < 1:
        raise ParameterError("need k >= 1 and d >= 1")
    if n < k:
        raise ParameterError(f"need at least one sample per cluster (n={n}, k={k})")
    rng = np.random.default_rng(seed)
    directions = rng.standard_normal((k, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = separation * directions
    labels = np.arange(n) % k
    x = means[labels] + rng.standard_normal((n, d))
    order = rng.permutation(n)
    return Dataset(x[order], labels[order].astype(np.int64))


def load_csv(path) -> Dataset:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, header row expected") from None
        has_label = bool(header) and header[-1].strip() == LABEL_COLUMN
        width = len(header)
        rows, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise StructureError(f"{path}: line {line_no} has {len(row)} fields, header has {width}")
            try:
                feats = [float(v) for v in (row[:-1] if has_label else row)]
                if has_label:
                    label = int(row[-1])
            except ValueError as exc:
                raise ParseError(f"{path}: line {line_no}: {exc}") from None
            if has_label:
                if label < 0:
                    raise ParseError(f"{path}: line {line_no}: negative label {label}")
                labels.append(label)
            rows.append(feats)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    names = tuple(h.strip() for h in (header[:-1] if has_label else header))
    x = as_tensor(np.array(rows, dtype=np.float64), name=str(path))
    return Dataset(x, np.array(labels, dtype=np.int64) if has_label else None, names)


def save_csv(dataset: Dataset, path) -> None:
    names = dataset.feature_names or tuple(f"x{i}" for i in range(dataset.dim))
    header = list(names) + ([LABEL_COLUMN] if dataset.labels is not None else [])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i, row in enumerate(dataset.x):
            out = [format(float(v), ".17g") for v in row]
            if dataset.labels is not None:
                out.append(str(int(dataset.labels[i])))
            writer.writerow(out)


def split(dataset: Dataset, train_fraction=0.9, seed=0):
    """Seeded shuffle split into disjoint (train, test)."""
    if not (0.0 < train_fraction < 1.0):
        raise ParameterError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(dataset)
    n_train = int(round(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise ParameterError(f"split of {n} rows at {train_fraction} leaves one side empty")
    tr, te = split_indices(n, train_fraction, seed)
    return dataset.subset(tr), dataset.subset(te)


def split_indices(n, train_fraction=0.9, seed=0):
    """Sorted (train, test) row indices of a seeded shuffle split."""
    perm = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray  # 1.0 where the train feature is constant

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, x):
        return np.asarray(x, dtype=np.float64) * self.std + self.mean

    @classmethod
    def fit(cls, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] == 0:
            raise ParameterError("cannot standardize an empty training set")
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        constant = std == 0
        # constant features pass through untouched
        return cls(np.where(constant, 0.0, mean), np.where(constant, 1.0, std))


def standardize(train: Dataset, *apply_to: Dataset):
    """Fit per-feature stats on ``train`` and apply them to every set given.

    Returns ``([train', *others'], stats)``.
    """
    stats = Standardizer.fit(train.x)
    out = [replace(ds, x=stats.apply(ds.x)) for ds in (train, *apply_to)]
    return out, stats
