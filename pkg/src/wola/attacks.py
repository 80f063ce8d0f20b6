"""Byzantine update generators.

Attackers see every honest update of the round before producing theirs.
Each attack returns an ``(f, d)`` array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import ModelSpec
from .numerics import InvalidInputError, as_batch
from .worker import LocalWorker

ATTACKS = ("none", "alie", "foe", "sf", "lf", "mimic")


@dataclass
class AttackContext:
    honest_updates: np.ndarray
    n: int
    f: int
    round: int = 0
    spec: ModelSpec | None = None
    theta: np.ndarray | None = None
    # Label-flip attackers run the honest protocol on these workers.
    byz_workers: Sequence[LocalWorker] | None = None
    step_kwargs: dict = field(default_factory=dict)

    def __post_init__(self):
        self.honest_updates = as_batch(self.honest_updates)
        if self.honest_updates.shape[0] != self.n - self.f:
            raise InvalidInputError(
                f"expected {self.n - self.f} honest updates, got {self.honest_updates.shape[0]}"
            )

    @property
    def dim(self) -> int:
        return self.honest_updates.shape[1]


def _replicate(row: np.ndarray, f: int) -> np.ndarray:
    return np.tile(row, (f, 1))


def normal_quantile(p: float, tol: float = 1e-10) -> float:
    """Standard normal quantile by bisection on ``erf``."""
    if not 0 < p < 1:
        raise InvalidInputError("quantile level must lie in (0, 1)")
    lo, hi = -40.0, 40.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if 0.5 * (1.0 + math.erf(mid / math.sqrt(2.0))) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def alie_z(n: int, f: int) -> float:
    """Deviation multiplier: ``s = floor(n/2) + 1 - f`` supporters are needed."""
    h = n - f
    s = n // 2 + 1 - f
    level = (h - s) / h
    if level <= 0.5:
        return 0.0
    if level >= 1.0:
        # Only reachable with f > n/2, outside the threat model.
        raise InvalidInputError(f"ALIE undefined for n={n}, f={f}")
    return max(0.0, normal_quantile(level))


def attack_alie(ctx: AttackContext, z: float | None = None) -> np.ndarray:
    if ctx.f < 1:
        raise InvalidInputError("ALIE needs f >= 1")
    if ctx.honest_updates.shape[0] < 2:
        raise InvalidInputError("ALIE needs at least two honest updates to estimate a spread")
    if z is None:
        z = alie_z(ctx.n, ctx.f)
    mu = ctx.honest_updates.mean(axis=0)
    sigma = ctx.honest_updates.std(axis=0, ddof=1)
    return _replicate(mu - z * sigma, ctx.f)


def attack_foe(ctx: AttackContext, epsilon: float = 1.1) -> np.ndarray:
    if ctx.f < 1:
        raise InvalidInputError("FOE needs f >= 1")
    return _replicate(-epsilon * ctx.honest_updates.mean(axis=0), ctx.f)


def attack_sf(ctx: AttackContext) -> np.ndarray:
    if ctx.f < 1:
        raise InvalidInputError("SF needs f >= 1")
    return _replicate(-ctx.honest_updates.mean(axis=0), ctx.f)


def flip_map(num_classes: int) -> np.ndarray:
    return num_classes - 1 - np.arange(num_classes)


def attack_lf(ctx: AttackContext) -> np.ndarray:
    """Honest protocol on label-flipped Byzantine shards.

    The workers in ``ctx.byz_workers`` are expected to have been built with
    :func:`flip_map` as their ``label_map``; each keeps its own momentum and
    RNG stream across rounds, exactly as an honest worker would.
    """
    workers = ctx.byz_workers
    if workers is None or len(workers) != ctx.f:
        raise InvalidInputError(f"label flipping needs {ctx.f} Byzantine workers with shards")
    if ctx.spec is None or ctx.theta is None:
        raise InvalidInputError("label flipping needs the model spec and parameters")
    rows = [w.step(ctx.spec, ctx.theta, **ctx.step_kwargs).copy() for w in workers]
    return np.stack(rows) if rows else np.empty((0, ctx.dim))


def mimic_scores(honest: np.ndarray, f: int) -> np.ndarray:
    """Surroundedness-weighted outlier score of every honest row.

    For each row ``i`` the rows are ranked by decreasing distance from it
    (rank 1 = farthest, rank h = ``i`` itself, distance ties by row index).
    Row ``j`` then gains ``min(f, rank(i, j)) * ||v_j - center||``.
    """
    h = honest.shape[0]
    center = honest.mean(axis=0)
    to_center = np.linalg.norm(honest - center, axis=1)
    dist = np.sqrt(np.maximum(((honest[:, None, :] - honest[None, :, :]) ** 2).sum(axis=2), 0.0))
    scores = np.zeros(h)
    for i in range(h):
        others = [j for j in range(h) if j != i]
        # lexsort: last key is primary -> decreasing distance, then index
        order = [others[k] for k in np.lexsort((others, -dist[i, others]))] + [i]
        rank = np.empty(h, dtype=np.int64)
        rank[order] = np.arange(1, h + 1)
        scores += np.minimum(f, rank) * to_center
    return scores


def mimic_index(honest, f: int) -> int:
    return int(np.argmax(mimic_scores(as_batch(honest), f)))


def attack_mimic(ctx: AttackContext) -> np.ndarray:
    if ctx.f < 1:
        raise InvalidInputError("Mimic needs f >= 1")
    if ctx.honest_updates.shape[0] < 2:
        raise InvalidInputError("Mimic needs at least two honest updates")
    k = mimic_index(ctx.honest_updates, ctx.f)
    return _replicate(ctx.honest_updates[k], ctx.f)


def get_attack(name: str, foe_epsilon: float = 1.1, alie_z_override: float | None = None) -> Callable[[AttackContext], np.ndarray]:
    if name == "none":
        return lambda ctx: np.empty((0, ctx.dim))
    if name == "alie":
        return lambda ctx: attack_alie(ctx, alie_z_override)
    if name == "foe":
        return lambda ctx: attack_foe(ctx, foe_epsilon)
    if name == "sf":
        return attack_sf
    if name == "lf":
        return attack_lf
    if name == "mimic":
        return attack_mimic
    raise InvalidInputError(f"unknown attack {name!r}; choose from {list(ATTACKS)}")
