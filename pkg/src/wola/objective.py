"""Shared training objective, WoLA sample weights and the objective attack.

Each honest worker reweights a sample of class ``y`` by ``q[y] / p_i[y]``,
where ``p_i`` is the label distribution of its whole shard and ``q`` the
objective every worker agreed on before training.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import LabeledDataset, check_distribution
from .model import ModelSpec, weighted_batch_gradient
from .numerics import InvalidInputError, weiszfeld_geometric_median

OBJECTIVE_MODES = ("global", "uniform", "provided")


def wola_weights(q, p_i, labels) -> np.ndarray:
    q = check_distribution(q)
    p_i = check_distribution(p_i, q.size)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= q.size):
        raise InvalidInputError(f"labels must lie in [0, {q.size})")
    local = p_i[labels]
    if np.any(local == 0):
        bad = sorted(set(labels[local == 0].tolist()))
        raise InvalidInputError(f"labels {bad} have zero local probability; not drawn from this shard")
    return q[labels] / local


def build_objective(mode: str, honest_dists=None, sizes=None, provided=None, num_classes: int | None = None) -> np.ndarray:
    """Training objective ``q`` for one of three ways of agreeing on it.

    ``global`` averages the honest distributions weighted by shard size,
    ``uniform`` is flat over the classes and ``provided`` passes a known
    distribution through after validation.
    """
    if mode == "provided":
        if provided is None:
            raise InvalidInputError("mode 'provided' needs a distribution")
        return check_distribution(provided, num_classes)
    if mode == "uniform":
        if num_classes is None:
            if not honest_dists:
                raise InvalidInputError("mode 'uniform' needs num_classes or honest_dists")
            num_classes = len(honest_dists[0])
        return np.full(num_classes, 1.0 / num_classes)
    if mode == "global":
        if not honest_dists or sizes is None:
            raise InvalidInputError("mode 'global' needs honest distributions and shard sizes")
        dists = np.stack([check_distribution(d) for d in honest_dists])
        sizes = np.asarray(sizes, dtype=np.float64)
        if sizes.shape != (dists.shape[0],) or np.any(sizes <= 0):
            raise InvalidInputError("sizes must be positive, one per distribution")
        return (sizes / sizes.sum()) @ dists
    raise InvalidInputError(f"objective mode must be one of {OBJECTIVE_MODES}, got {mode!r}")


def honest_mean(honest_dists, sizes=None) -> np.ndarray:
    dists = np.stack([check_distribution(d) for d in honest_dists])
    if sizes is None:
        return dists.mean(axis=0)
    sizes = np.asarray(sizes, dtype=np.float64)
    return (sizes / sizes.sum()) @ dists


def objective_attack_worst(honest_dists: Sequence, sizes, f: int, n: int) -> list[np.ndarray]:
    """Honest distributions followed by ``f`` one-hots on the rarest honest class.

    The rarest class is the argmin of the honest mean (size-weighted when
    ``sizes`` is given); ties resolve to the lowest class index.
    """
    if not 0 <= f < n:
        raise InvalidInputError(f"need 0 <= f < n, got f={f}, n={n}")
    if len(honest_dists) != n - f:
        raise InvalidInputError(f"expected {n - f} honest distributions, got {len(honest_dists)}")
    honest = [check_distribution(d) for d in honest_dists]
    target = int(np.argmin(honest_mean(honest, sizes)))
    onehot = np.zeros(honest[0].size)
    onehot[target] = 1.0
    return honest + [onehot.copy() for _ in range(f)]


def objective_deviation_bound(u, f: int, n: int) -> float:
    """Largest l1 shift ``f`` Byzantine submissions can cause in a mean of ``n``."""
    if not 0 <= f < n:
        raise InvalidInputError(f"need 0 <= f < n, got f={f}, n={n}")
    u = check_distribution(u)
    return (f / n) * (2.0 - 2.0 * float(u.min()))


def aggregate_objective_gm(submissions, tol: float = 1e-9, max_iter: int = 1000) -> np.ndarray:
    subs = np.stack([check_distribution(s) for s in submissions])
    q = weiszfeld_geometric_median(subs, tol=tol, max_iter=max_iter)
    # A convex combination of simplex points; only rounding can push it off.
    q = np.clip(q, 0.0, 1.0)
    return check_distribution(q / q.sum())


def class_gradient(spec: ModelSpec, theta, ds: LabeledDataset, c: int) -> np.ndarray:
    """Mean per-sample gradient over the instances of class ``c``."""
    mask = ds.labels == c
    if not mask.any():
        raise InvalidInputError(f"class {c} has no instances")
    return weighted_batch_gradient(spec, theta, ds.features[mask], ds.labels[mask])


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise InvalidInputError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))
