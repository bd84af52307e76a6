"""Deterministic synthetic datasets and CSV ingestion."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from clipflow import rng
from clipflow.net import Batch

KINDS = ("synthetic_regression", "gaussian_blobs", "two_moons", "csv")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "synthetic_regression"
    n: int = 128
    dim: int = 4
    classes: int = 2
    noise: float = 0.0
    seed: int = 0
    split: float = 0.8
    standardize: bool = True
    standardize_targets: bool = False
    separation: float = 3.0
    feature_scale: float = 1.0
    path: str | None = None
    target: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DatasetError(f"unknown dataset kind {self.kind!r}")
        if self.kind != "csv":
            if self.n < 2:
                raise DatasetError("need at least two samples")
            if self.dim < 1:
                raise DatasetError("input dimension must be positive")
            if self.kind == "two_moons" and self.dim != 2:
                raise DatasetError("two_moons is two-dimensional")
            if self.kind in ("gaussian_blobs", "two_moons") and self.classes < 2:
                raise DatasetError("classification needs at least two classes")
        if not 0 < self.split <= 1:
            raise DatasetError(f"split must lie in (0, 1], got {self.split}")
        if self.noise < 0:
            raise DatasetError("noise must be nonnegative")
        if not self.feature_scale > 0:
            raise DatasetError("feature_scale must be positive")

    @property
    def classification(self) -> bool:
        return self.kind in ("gaussian_blobs", "two_moons")


def regression_target(x: np.ndarray) -> np.ndarray:
    """Fixed smooth target g(x) = sin(x . a) + 0.5 cos(x . b) with deterministic a, b."""
    d = x.shape[1]
    k = np.arange(1, d + 1)
    a = 1.0 / np.sqrt(k)
    b = np.cos(k) / np.sqrt(d)
    return np.sin(x @ a) + 0.5 * np.cos(x @ b)


def _one_hot(labels: np.ndarray, m: int) -> np.ndarray:
    return np.eye(m)[labels]


def _raw(spec: DatasetSpec) -> tuple[np.ndarray, np.ndarray]:
    gen = rng.generator(spec.seed, 0, f"data/{spec.kind}")
    if spec.kind == "synthetic_regression":
        x = gen.standard_normal((spec.n, spec.dim))
        y = regression_target(x)
        if spec.noise:
            y = y + spec.noise * gen.standard_normal(spec.n)
        return x, y[:, None]
    if spec.kind == "gaussian_blobs":
        centers = gen.standard_normal((spec.classes, spec.dim))
        centers *= spec.separation / np.maximum(np.linalg.norm(centers, axis=1, keepdims=True), 1e-12)
        labels = np.arange(spec.n) % spec.classes
        gen.shuffle(labels)
        x = centers[labels] + max(spec.noise, 1e-12) * gen.standard_normal((spec.n, spec.dim))
        return x, _one_hot(labels, spec.classes)
    labels = np.arange(spec.n) % 2
    gen.shuffle(labels)
    theta = math.pi * gen.random(spec.n)
    x = np.where(
        labels[:, None] == 0,
        np.stack([np.cos(theta), np.sin(theta)], axis=1),
        np.stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)], axis=1),
    )
    x = x + spec.noise * gen.standard_normal((spec.n, 2))
    return x, _one_hot(labels, 2)


def split_and_standardize(x: np.ndarray, y: np.ndarray, spec: DatasetSpec,
                          classification: bool) -> tuple[Batch, Batch | None]:
    n = x.shape[0]
    perm = rng.generator(spec.seed, 0, "data/split").permutation(n)
    n_train = int(round(spec.split * n))
    n_train = min(max(n_train, 1), n)
    tr, te = perm[:n_train], perm[n_train:]
    x_tr, x_te = x[tr], x[te]
    y_tr, y_te = y[tr], y[te]
    if spec.standardize:
        mu = x_tr.mean(axis=0)
        sd = x_tr.std(axis=0)
        sd[sd == 0] = 1.0
        x_tr = (x_tr - mu) / sd
        x_te = (x_te - mu) / sd
    if spec.feature_scale != 1.0:
        # a larger input scale grows the NTK of a ReLU net quadratically
        x_tr = x_tr * spec.feature_scale
        x_te = x_te * spec.feature_scale
    if spec.standardize_targets and not classification:
        mu = y_tr.mean(axis=0)
        sd = y_tr.std(axis=0)
        sd[sd == 0] = 1.0
        y_tr = (y_tr - mu) / sd
        y_te = (y_te - mu) / sd
    train = Batch(x_tr, y_tr, classification)
    test = Batch(x_te, y_te, classification) if len(te) else None
    return train, test


def generate(spec: DatasetSpec) -> tuple[Batch, Batch | None]:
    """(train, test) batches; standardization uses train statistics only."""
    if spec.kind == "csv":
        if not spec.path or not spec.target:
            raise DatasetError("csv datasets need a path and a target column")
        return load_csv(spec.path, spec.target, spec)
    x, y = _raw(spec)
    return split_and_standardize(x, y, spec, spec.classification)


def load_csv(path, target: str, spec: DatasetSpec | None = None) -> tuple[Batch, Batch | None]:
    """Read a numeric CSV with a header row and split it into (train, test)."""
    spec = spec or DatasetSpec(kind="csv", path=str(path), target=target)
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if target not in header:
            raise DatasetError(f"{path}: no column named {target!r} (have {header})")
        rows = []
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DatasetError(
                    f"{path}: line {reader.line_num} has {len(row)} fields, expected {len(header)}"
                )
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise DatasetError(f"{path}: line {reader.line_num} has a non-numeric cell") from None
    if len(rows) < 2:
        raise DatasetError(f"{path}: need at least two data rows")
    data = np.array(rows)
    if not np.all(np.isfinite(data)):
        raise DatasetError(f"{path}: non-finite values")
    j = header.index(target)
    x = np.delete(data, j, axis=1)
    y = data[:, j:j + 1]
    return split_and_standardize(x, y, spec, classification=False)
