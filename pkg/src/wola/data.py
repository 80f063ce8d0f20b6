"""Datasets, Dirichlet label-skew partitioning and label-distribution bookkeeping."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .numerics import InvalidInputError

SIMPLEX_TOL = 1e-9
MAX_PARTITION_DRAWS = 100


class DataParseError(InvalidInputError):
    """A CSV row could not be parsed; ``line`` is 1-based."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DegeneratePartitionError(InvalidInputError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    class_names: tuple[str, ...] | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise InvalidInputError(f"features must be 2-d, got shape {feats.shape}")
        if labels.shape != (feats.shape[0],):
            raise InvalidInputError("features and labels differ in length")
        if self.num_classes < 1:
            raise InvalidInputError("num_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise InvalidInputError(f"labels must lie in [0, {self.num_classes})")
        if not np.all(np.isfinite(feats)):
            raise InvalidInputError("features contain non-finite values")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.num_classes, self.class_names)


@dataclass(frozen=True)
class WorkerShard:
    data: LabeledDataset
    class_counts: np.ndarray = field(default=None)  # filled from data when omitted

    def __post_init__(self):
        actual = self.data.class_counts()
        if self.class_counts is None:
            object.__setattr__(self, "class_counts", actual)
        elif not np.array_equal(np.asarray(self.class_counts), actual):
            raise InvalidInputError("class_counts disagree with the shard's labels")

    @property
    def size(self) -> int:
        return len(self.data)


def check_distribution(probs, num_classes: int | None = None) -> np.ndarray:
    """Validate a label distribution and return it as a float array."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise InvalidInputError("a label distribution must be a non-empty vector")
    if num_classes is not None and p.size != num_classes:
        raise InvalidInputError(f"expected {num_classes} classes, got {p.size}")
    if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise InvalidInputError("distribution entries must lie in [0, 1]")
    if abs(p.sum() - 1.0) > SIMPLEX_TOL:
        raise InvalidInputError(f"distribution sums to {p.sum()!r}, not 1")
    return p


def _simplex_means(num_classes: int, feature_dim: int, sep: float) -> np.ndarray:
    """Class centres with pairwise distance ``sep`` where the dimension allows it."""
    if feature_dim >= num_classes - 1:
        # Regular simplex: scaled basis vectors, centred, expressed in an
        # orthonormal basis of their (C-1)-dim affine span.
        verts = np.eye(num_classes) * (sep / math.sqrt(2.0))
        verts -= verts.mean(axis=0)
        _, _, vt = np.linalg.svd(verts, full_matrices=False)
        coords = verts @ vt[: num_classes - 1].T
        means = np.zeros((num_classes, feature_dim))
        means[:, : num_classes - 1] = coords
        return means
    if feature_dim == 1:
        return (np.arange(num_classes) * sep - sep * (num_classes - 1) / 2.0)[:, None]
    # Too few dimensions for a simplex: a regular polygon with side ``sep``.
    radius = sep / (2.0 * math.sin(math.pi / num_classes))
    ang = 2.0 * math.pi * np.arange(num_classes) / num_classes
    means = np.zeros((num_classes, feature_dim))
    means[:, 0] = radius * np.cos(ang)
    means[:, 1] = radius * np.sin(ang)
    return means


def generate_synthetic(
    num_classes: int,
    feature_dim: int,
    samples_per_class: int,
    class_separation: float,
    seed: int,
) -> LabeledDataset:
    """Unit-variance Gaussian blobs, one per class, in shuffled order."""
    if num_classes < 2 or feature_dim < 1 or samples_per_class < 1:
        raise InvalidInputError("need num_classes >= 2, feature_dim >= 1, samples_per_class >= 1")
    if class_separation <= 0:
        raise InvalidInputError("class_separation must be positive")
    rng = np.random.default_rng(seed)
    means = _simplex_means(num_classes, feature_dim, class_separation)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    feats = means[labels] + rng.standard_normal((labels.size, feature_dim))
    order = rng.permutation(labels.size)
    return LabeledDataset(feats[order], labels[order], num_classes)


def _parse_float(cell: str) -> float | None:
    try:
        return float(cell)
    except ValueError:
        return None


def load_csv_dataset(path, label_column: int = -1) -> LabeledDataset:
    """Read a numeric CSV whose ``label_column`` holds class names or indices.

    A first row with a non-numeric feature cell is taken as a header. String
    labels are indexed by first appearance; if every label is a non-negative
    integer the integers are used directly.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [(i + 1, r) for i, r in enumerate(csv.reader(fh)) if any(c.strip() for c in r)]
    if not rows:
        raise InvalidInputError(f"{path} is empty")
    width = len(rows[0][1])
    if width < 2:
        raise DataParseError("need at least one feature column and a label column", rows[0][0])
    lc = label_column % width
    feat_cols = [j for j in range(width) if j != lc]
    if any(_parse_float(rows[0][1][j]) is None for j in feat_cols):
        rows = rows[1:]
        if not rows:
            raise InvalidInputError(f"{path} has a header but no data rows")

    feats, raw_labels = [], []
    for line, row in rows:
        if len(row) != width:
            raise DataParseError(f"expected {width} columns, found {len(row)}", line)
        vals = []
        for j in feat_cols:
            v = _parse_float(row[j])
            if v is None or not math.isfinite(v):
                raise DataParseError(f"non-numeric feature {row[j]!r} in column {j}", line)
            vals.append(v)
        feats.append(vals)
        raw_labels.append(row[lc].strip())

    if all(s.isdigit() for s in raw_labels):
        labels = [int(s) for s in raw_labels]
        num_classes = max(labels) + 1
        names = None
    else:
        index: dict[str, int] = {}
        for s in raw_labels:
            index.setdefault(s, len(index))
        labels = [index[s] for s in raw_labels]
        num_classes = len(index)
        names = tuple(index)
    return LabeledDataset(np.array(feats, dtype=np.float64), np.array(labels), num_classes, names)


def bundled_iris_path() -> Path:
    return Path(str(resources.files("wola") / "datasets" / "iris.csv"))


def load_iris() -> LabeledDataset:
    return load_csv_dataset(bundled_iris_path())


def _largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    """Integer apportionment of ``total`` proportional to ``weights``."""
    exact = total * weights / weights.sum()
    counts = np.floor(exact).astype(np.int64)
    short = total - int(counts.sum())
    if short:
        # Stable sort keeps ties deterministic (lower index first).
        order = np.argsort(-(exact - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _balanced_counts(class_totals, sizes, props, max_iter=10_000):
    """Integer class x worker table with fixed row and column sums.

    ``props`` (classes x workers) is scaled by alternating row/column
    normalisation until both marginals hold. Classes are then rounded one at
    a time: floors of the scaled targets (capped by each worker's remaining
    room) first, leftover units by descending fractional part, and any units
    still unplaced go to the workers with the most room left. Remaining room
    always equals the remaining samples, so both sums come out exact.
    """
    totals = np.asarray(class_totals, dtype=np.int64)
    room = np.asarray(sizes, dtype=np.int64).copy()
    t = np.maximum(props, 1e-300) * totals[:, None].astype(np.float64)
    target_sizes = room.astype(np.float64)
    for _ in range(max_iter):
        t *= target_sizes / t.sum(axis=0)
        rows = t.sum(axis=1)
        t *= np.divide(totals, rows, out=np.zeros_like(rows), where=rows > 0)[:, None]
        if np.max(np.abs(t.sum(axis=0) - target_sizes)) < 1e-6:
            break
    else:
        return None
    counts = np.zeros(t.shape, dtype=np.int64)
    for c in range(t.shape[0]):
        row = np.minimum(np.floor(t[c]).astype(np.int64), room)
        short = int(totals[c] - row.sum())
        if short > 0:
            frac = np.where(row < room, t[c] - np.floor(t[c]), -1.0)
            for i in np.argsort(-frac, kind="stable"):
                if short == 0 or frac[i] <= 0:
                    break
                row[i] += 1
                short -= 1
        while short > 0:
            i = int(np.argmax(room - row))
            row[i] += 1
            short -= 1
        if short < 0:
            # Floors can overshoot a class total only through rounding noise.
            for i in np.argsort(t[c] - row, kind="stable"):
                take = min(row[i], -short)
                row[i] -= take
                short += take
                if short == 0:
                    break
        counts[c] = row
        room -= row
    return counts


def dirichlet_partition(
    ds: LabeledDataset,
    num_workers: int,
    alpha: float,
    seed: int,
    equal_size: bool = True,
) -> list[WorkerShard]:
    """Split ``ds`` across workers with Dirichlet(alpha) label skew.

    Each class draws Dirichlet(alpha, ..., alpha) proportions over workers.
    With ``equal_size`` (the default) every worker holds ``len(ds)/num_workers``
    samples (remainder spread over the first workers) and the class tables are
    fitted to those sizes; otherwise each class is split by its proportions
    directly. Samples within a class are assigned by a seeded shuffle followed
    by contiguous slicing, so the union of the shards is exactly ``ds``.

    Raises:
        DegeneratePartitionError: a worker kept ending up empty after 100 draws.
    """
    if num_workers < 1:
        raise InvalidInputError("num_workers must be at least 1")
    if alpha <= 0:
        raise InvalidInputError("alpha must be positive")
    totals = ds.class_counts()
    if np.any(totals == 0):
        missing = np.flatnonzero(totals == 0).tolist()
        raise InvalidInputError(f"classes {missing} have no samples in the dataset")
    if len(ds) < num_workers:
        raise DegeneratePartitionError(f"{len(ds)} samples cannot fill {num_workers} workers")
    rng = np.random.default_rng(seed)
    if num_workers == 1:
        return [WorkerShard(ds)]

    sizes = _largest_remainder(len(ds), np.ones(num_workers))
    table = None
    for _ in range(MAX_PARTITION_DRAWS):
        props = rng.dirichlet(np.full(num_workers, alpha), size=ds.num_classes)
        props = np.nan_to_num(props, nan=0.0)
        if equal_size:
            table = _balanced_counts(totals, sizes, props)
        else:
            table = np.stack(
                [
                    _largest_remainder(int(totals[c]), props[c])
                    if props[c].sum() > 0
                    else _largest_remainder(int(totals[c]), np.ones(num_workers))
                    for c in range(ds.num_classes)
                ]
            )
        if table is not None and np.all(table.sum(axis=0) > 0):
            break
        table = None
    if table is None:
        raise DegeneratePartitionError(
            f"no partition with every worker non-empty after {MAX_PARTITION_DRAWS} draws"
        )

    assigned: list[list[np.ndarray]] = [[] for _ in range(num_workers)]
    for c in range(ds.num_classes):
        members = np.flatnonzero(ds.labels == c)
        members = members[rng.permutation(members.size)]
        bounds = np.concatenate([[0], np.cumsum(table[c])])
        for i in range(num_workers):
            assigned[i].append(members[bounds[i] : bounds[i + 1]])
    return [WorkerShard(ds.subset(np.sort(np.concatenate(parts)))) for parts in assigned]


def label_distribution(shard: WorkerShard) -> np.ndarray:
    if shard.size < 1:
        raise InvalidInputError("empty shard has no label distribution")
    return shard.class_counts / shard.size


def global_distribution(shards: Sequence[WorkerShard]) -> np.ndarray:
    if not shards:
        raise InvalidInputError("need at least one shard")
    counts = np.sum([s.class_counts for s in shards], axis=0)
    total = counts.sum()
    if total == 0:
        raise InvalidInputError("all shards are empty")
    return counts / total


def train_test_split(ds: LabeledDataset, test_fraction: float, seed: int):
    """Per-class split so the test labels follow the training distribution."""
    if not 0 < test_fraction < 1:
        raise InvalidInputError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(ds.num_classes):
        members = np.flatnonzero(ds.labels == c)
        members = members[rng.permutation(members.size)]
        k = int(round(test_fraction * members.size))
        test_idx.append(members[:k])
        train_idx.append(members[k:])
    return ds.subset(np.sort(np.concatenate(train_idx))), ds.subset(np.sort(np.concatenate(test_idx)))
