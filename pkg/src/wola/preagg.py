"""Transforms applied to an :class:`UpdateSet` before the aggregation rule."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .aggregation import UpdateSet
from .numerics import InvalidInputError, pairwise_sq_distances


def bucket_size(n: int, f: int) -> int:
    if f < 1:
        raise InvalidInputError("bucketing needs f >= 1; use the identity pre-aggregator for f = 0")
    return n // (2 * f)


def pre_bucketing(u: UpdateSet, f: int, seed: int) -> UpdateSet:
    """Shuffle rows and replace each bucket of ``floor(n / 2f)`` by its mean.

    A bucket size of 1 leaves the set untouched. The last bucket may be short.
    """
    s = bucket_size(u.n, f)
    if s <= 1:
        return u
    perm = np.random.default_rng(seed).permutation(u.n)
    rows = u.updates[perm]
    means = [rows[start : start + s].mean(axis=0) for start in range(0, u.n, s)]
    return u.with_updates(np.stack(means))


def pre_nnm(u: UpdateSet) -> UpdateSet:
    """Replace every row by the mean of its ``n - f`` nearest rows, itself included."""
    k = u.n - u.declared_f
    d = pairwise_sq_distances(u.updates)
    mixed = np.empty_like(u.updates)
    for i in range(u.n):
        nearest = np.sort(np.argsort(d[i], kind="stable")[:k])
        mixed[i] = u.updates[nearest].mean(axis=0)
    return u.with_updates(mixed)


def foundationfl_scores(updates: np.ndarray) -> np.ndarray:
    hi = updates.max(axis=0)
    lo = updates.min(axis=0)
    return np.minimum(np.linalg.norm(hi - updates, axis=1), np.linalg.norm(lo - updates, axis=1))


def pre_foundationfl(u: UpdateSet, m: int) -> UpdateSet:
    """Append ``m`` copies of the row farthest from the coordinate-wise extremes."""
    if m < 1:
        raise InvalidInputError("m must be at least 1")
    best = u.updates[int(np.argmax(foundationfl_scores(u.updates)))]
    return u.with_updates(np.vstack([u.updates, np.tile(best, (m, 1))]))


def foundationfl_copies(n: int) -> int:
    return max(1, n // 2)


PREAGGREGATORS = ("none", "bucketing", "nnm", "foundationfl")


def get_preaggregator(name: str, n: int, f: int) -> Callable[[UpdateSet, int], UpdateSet]:
    """Return ``pre(update_set, seed)`` for a registered name.

    ``n`` is the worker count and ``f`` the declared Byzantine count; they
    fix the bucket size and the FoundationFL copy count.
    """
    if name == "none" or (name == "bucketing" and f == 0):
        return lambda u, seed: u
    if name == "bucketing":
        return lambda u, seed: pre_bucketing(u, f, seed)
    if name == "nnm":
        return lambda u, seed: pre_nnm(u)
    if name == "foundationfl":
        m = foundationfl_copies(n)
        return lambda u, seed: pre_foundationfl(u, m)
    raise InvalidInputError(f"unknown pre-aggregator {name!r}; choose from {list(PREAGGREGATORS)}")
