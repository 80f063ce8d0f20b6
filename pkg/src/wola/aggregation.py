"""Robust aggregation rules over one round of worker updates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .numerics import (
    InvalidInputError,
    as_batch,
    coordinate_median,
    pairwise_sq_distances,
    weiszfeld_geometric_median,
)


@dataclass(frozen=True)
class UpdateSet:
    """The ``n`` update vectors of a round plus the robustness parameter.

    ``declared_f`` is what f-aware rules are told; it need not match the
    true number of Byzantine rows.
    """

    updates: np.ndarray
    declared_f: int = 0

    def __post_init__(self):
        object.__setattr__(self, "updates", as_batch(self.updates))
        if not 0 <= self.declared_f < self.n:
            raise InvalidInputError(f"declared_f must lie in [0, n), got {self.declared_f} with n={self.n}")

    @property
    def n(self) -> int:
        return self.updates.shape[0]

    def with_updates(self, updates) -> "UpdateSet":
        return UpdateSet(updates, self.declared_f)


def agg_mean(u: UpdateSet) -> np.ndarray:
    return u.updates.mean(axis=0)


def agg_cwmed(u: UpdateSet) -> np.ndarray:
    return coordinate_median(u.updates)


def agg_cwtm(u: UpdateSet) -> np.ndarray:
    f = u.declared_f
    if u.n <= 2 * f:
        raise InvalidInputError(f"trimmed mean needs n > 2f, got n={u.n}, f={f}")
    if f == 0:
        # Summing in sorted order would differ from the mean in the last bit.
        return agg_mean(u)
    ordered = np.sort(u.updates, axis=0)
    return ordered[f : u.n - f].mean(axis=0)


def agg_gm(u: UpdateSet, tol: float = 1e-9, max_iter: int = 1000) -> np.ndarray:
    return weiszfeld_geometric_median(u.updates, tol=tol, max_iter=max_iter)


def krum_scores(u: UpdateSet) -> np.ndarray:
    """Sum of squared distances to the ``n - f - 2`` closest other rows."""
    n, f = u.n, u.declared_f
    if n < f + 3:
        raise InvalidInputError(f"Krum needs n >= f + 3, got n={n}, f={f}")
    d = pairwise_sq_distances(u.updates)
    k = n - f - 2
    scores = np.empty(n)
    for i in range(n):
        others = np.sort(np.delete(d[i], i))
        scores[i] = others[:k].sum()
    return scores


def _lowest_scores(scores: np.ndarray, m: int) -> np.ndarray:
    return np.sort(np.argsort(scores, kind="stable")[:m])


def agg_mkrum(u: UpdateSet) -> np.ndarray:
    chosen = _lowest_scores(krum_scores(u), u.n - u.declared_f)
    return u.updates[chosen].mean(axis=0)


def agg_krum(u: UpdateSet) -> np.ndarray:
    return u.updates[int(np.argmin(krum_scores(u)))].copy()


AGGREGATORS: dict[str, Callable[..., np.ndarray]] = {
    "mean": agg_mean,
    "cwmed": agg_cwmed,
    "cwtm": agg_cwtm,
    "gm": agg_gm,
    "krum": agg_krum,
    "mkrum": agg_mkrum,
}


def get_aggregator(name: str, gm_tol: float = 1e-9, gm_max_iter: int = 1000) -> Callable[[UpdateSet], np.ndarray]:
    if name not in AGGREGATORS:
        raise InvalidInputError(f"unknown aggregator {name!r}; choose from {sorted(AGGREGATORS)}")
    if name == "gm":
        return lambda u: agg_gm(u, tol=gm_tol, max_iter=gm_max_iter)
    return AGGREGATORS[name]
