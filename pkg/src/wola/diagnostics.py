"""Measurement helpers that sit outside the training loop.

``gradient_scaling_sweep`` measures how honest-gradient dissimilarity behaves
as shards grow, at a fixed parameter vector. ``class_cosine_trace`` trains a
small model centrally and records how aligned the class gradients are.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .data import (
    LabeledDataset,
    dirichlet_partition,
    generate_synthetic,
    global_distribution,
    label_distribution,
    train_test_split,
)
from .model import ModelSpec, batch_loss, init_params, weighted_batch_gradient
from .numerics import InvalidInputError
from .objective import (
    class_gradient,
    cosine_similarity,
    objective_attack_worst,
    objective_deviation_bound,
    wola_weights,
)
from .seeding import stream_id
from .training import gradient_dissimilarity, test_accuracy


@dataclass(frozen=True)
class ScalingPoint:
    """Seed-averaged measurements at one per-worker sample count."""

    samples_per_worker: int
    wola_dissimilarity: float
    standard_dissimilarity: float
    mean_gap: float  # ||mean WoLA gradient - mean standard gradient||


def _scaling_one(spec, theta, shards, q):
    sizes = [s.size for s in shards]
    std, wola = [], []
    for s in shards:
        x, y = s.data.features, s.data.labels
        std.append(weighted_batch_gradient(spec, theta, x, y))
        wola.append(weighted_batch_gradient(spec, theta, x, y, wola_weights(q, label_distribution(s), y)))
    std, wola = np.stack(std), np.stack(wola)
    w = np.asarray(sizes, dtype=np.float64) / sum(sizes)
    return (
        gradient_dissimilarity(wola, sizes),
        gradient_dissimilarity(std, sizes),
        float(np.linalg.norm(w @ wola - w @ std)),
    )


def gradient_scaling_sweep(
    samples_per_worker: Sequence[int] = (100, 1000, 10000),
    seeds: Sequence[int] = tuple(range(10)),
    num_classes: int = 5,
    feature_dim: int = 10,
    num_workers: int = 8,
    alpha: float = 0.3,
    class_separation: float = 3.0,
    q=None,
) -> list[ScalingPoint]:
    """Full-batch honest gradients at a fixed random model, for growing shards.

    For every seed the class-to-worker Dirichlet proportions and the model
    parameters stay fixed across sample counts; only the amount of data
    changes. ``q`` defaults to the global label distribution, which is uniform
    here because the generated classes are balanced.
    """
    if num_workers < 2:
        raise InvalidInputError("need at least two workers")
    spec = ModelSpec("softmax_regression", feature_dim, num_classes)
    rows = []
    for n_per in samples_per_worker:
        if (n_per * num_workers) % num_classes:
            raise InvalidInputError("samples_per_worker * num_workers must be divisible by num_classes")
        per_seed = []
        for seed in seeds:
            ds = generate_synthetic(
                num_classes, feature_dim, n_per * num_workers // num_classes, class_separation,
                stream_id("scaling-data", n_per, seed) % (2**63),
            )
            # Same partition seed at every size -> same Dirichlet proportions.
            shards = dirichlet_partition(ds, num_workers, alpha, stream_id("scaling-partition", 0, seed) % (2**63))
            theta = init_params(spec, stream_id("scaling-init", 0, seed) % (2**63))
            target = global_distribution(shards) if q is None else np.asarray(q, dtype=np.float64)
            per_seed.append(_scaling_one(spec, theta, shards, target))
        m = np.mean(per_seed, axis=0)
        rows.append(ScalingPoint(int(n_per), float(m[0]), float(m[1]), float(m[2])))
    return rows


@dataclass(frozen=True)
class TraceStep:
    step: int
    loss: float
    test_accuracy: float
    cosines: dict  # (class_a, class_b) -> cosine of their class gradients


def standardize(train: LabeledDataset, test: LabeledDataset) -> tuple[LabeledDataset, LabeledDataset]:
    """Scale features to zero mean and unit variance using training statistics."""
    mu = train.features.mean(axis=0)
    sd = train.features.std(axis=0)
    sd[sd == 0] = 1.0

    def apply(ds):
        return LabeledDataset((ds.features - mu) / sd, ds.labels, ds.num_classes, ds.class_names)

    return apply(train), apply(test)


def class_cosine_trace(
    ds: LabeledDataset,
    steps: int = 300,
    lr: float = 0.5,
    hidden_dim: int = 8,
    test_fraction: float = 0.3,
    seed: int = 0,
) -> list[TraceStep]:
    """Full-batch gradient descent on a one-hidden-layer tanh network.

    Entry ``k`` is measured at the parameters after ``k`` steps; the class
    gradients are taken over the training split.
    """
    if steps < 1:
        raise InvalidInputError("steps must be positive")
    train, test = train_test_split(ds, test_fraction, seed)
    train, test = standardize(train, test)
    spec = ModelSpec("mlp", train.feature_dim, ds.num_classes, hidden_dim=hidden_dim, activation="tanh")
    theta = init_params(spec, seed)
    present = [c for c in range(ds.num_classes) if np.any(train.labels == c)]
    pairs = list(combinations(present, 2))
    trace = []
    for k in range(steps + 1):
        grads = {c: class_gradient(spec, theta, train, c) for c in present}
        cos = {}
        for a, b in pairs:
            try:
                cos[(a, b)] = cosine_similarity(grads[a], grads[b])
            except InvalidInputError:
                cos[(a, b)] = float("nan")
        trace.append(
            TraceStep(
                step=k,
                loss=batch_loss(spec, theta, train.features, train.labels),
                test_accuracy=test_accuracy(spec, theta, test),
                cosines=cos,
            )
        )
        if k < steps:
            theta = theta - lr * weighted_batch_gradient(spec, theta, train.features, train.labels)
    return trace


@dataclass(frozen=True)
class BoundReport:
    n: int
    f: int
    trials: int
    max_random_ratio: float  # largest realized deviation / bound over random adversaries
    worst_ratio_min: float  # worst-attack deviation / bound, smallest and largest over trials
    worst_ratio_max: float
    violations: int

    @property
    def ok(self) -> bool:
        return self.violations == 0 and abs(self.worst_ratio_min - 1.0) <= 1e-12 and abs(self.worst_ratio_max - 1.0) <= 1e-12


def _deviation(submissions, u) -> float:
    return float(np.abs(np.mean(submissions, axis=0) - u).sum())


def _ratio(dev: float, bound: float) -> float:
    if bound == 0.0:
        return 1.0 if dev == 0.0 else float("inf")
    return dev / bound


def objective_bound_check(n: int, f: int, trials: int, seed: int, num_classes: int = 10, alpha: float = 1.0) -> BoundReport:
    """Compare mean-aggregated objective shifts with their worst-case bound.

    Each trial draws ``n - f`` honest label distributions from a symmetric
    Dirichlet, then measures the shift caused by the worst attack and by
    ``f`` random submissions (Dirichlet draws mixed with one-hot vectors).
    """
    if not 0 <= f < n:
        raise InvalidInputError(f"need 0 <= f < n, got f={f}, n={n}")
    if trials < 1 or num_classes < 2:
        raise InvalidInputError("need trials >= 1 and num_classes >= 2")
    rng = np.random.default_rng(seed)
    worst_ratios, random_ratios, violations = [], [], 0
    for _ in range(trials):
        honest = list(rng.dirichlet(alpha * np.ones(num_classes), size=n - f))
        u = np.mean(honest, axis=0)
        bound = objective_deviation_bound(u, f, n)
        worst_ratios.append(_ratio(_deviation(objective_attack_worst(honest, None, f, n), u), bound))
        byz = rng.dirichlet(rng.uniform(0.05, 5.0) * np.ones(num_classes), size=f)
        hot = rng.random(f) < 0.5
        byz[hot] = np.eye(num_classes)[rng.integers(0, num_classes, size=int(hot.sum()))]
        dev = _deviation(honest + list(byz), u)
        random_ratios.append(_ratio(dev, bound))
        if dev > bound + 1e-12:
            violations += 1
    return BoundReport(
        n=n,
        f=f,
        trials=trials,
        max_random_ratio=float(max(random_ratios)),
        worst_ratio_min=float(min(worst_ratios)),
        worst_ratio_max=float(max(worst_ratios)),
        violations=violations,
    )
