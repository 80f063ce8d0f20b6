"""Robust distributed stochastic heavy-ball training and its metrics.

Per round: honest workers update their momenta, the attack then builds the
Byzantine rows from those momenta, the server pre-aggregates and aggregates
the full set, and the model takes a step against the aggregate.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .aggregation import UpdateSet
from .attacks import AttackContext
from .data import LabeledDataset
from .model import ModelSpec, batch_loss, predict
from .numerics import ConvergenceError, InvalidInputError
from .seeding import stream_id
from .worker import LocalWorker, clip, honest_step  # noqa: F401  (re-exported)

SCHEDULES = ("inverse_step", "two_phase", "constant")


def lr_schedule(kind: str, t: int, base: float = 0.75, period: int = 50, hi: float = 0.25, lo: float = 0.025, switch: int = 1500) -> float:
    """Learning rate at round ``t`` (1-based).

    ``inverse_step``: ``base / (1 + floor(t / period))``;
    ``two_phase``: ``hi`` up to and including round ``switch``, ``lo`` after;
    ``constant``: ``base``.
    """
    if t < 1:
        raise InvalidInputError("rounds are numbered from 1")
    if kind == "inverse_step":
        if base <= 0 or period <= 0:
            raise InvalidInputError("inverse_step needs positive base and period")
        return base / (1 + t // period)
    if kind == "two_phase":
        if hi <= 0 or lo <= 0 or switch <= 0:
            raise InvalidInputError("two_phase needs positive hi, lo and switch")
        return hi if t <= switch else lo
    if kind == "constant":
        if base <= 0:
            raise InvalidInputError("constant schedule needs a positive base")
        return base
    raise InvalidInputError(f"schedule must be one of {SCHEDULES}, got {kind!r}")


def gradient_dissimilarity(updates, sizes=None) -> float:
    """Mean squared distance of honest updates from their (size-weighted) mean."""
    g = np.asarray(updates, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] == 0:
        raise InvalidInputError("need at least one honest update")
    if sizes is None:
        center = g.mean(axis=0)
    else:
        w = np.asarray(sizes, dtype=np.float64)
        center = (w / w.sum()) @ g
    return float(np.mean(np.sum((g - center) ** 2, axis=1)))


def test_accuracy(spec: ModelSpec, theta, test_set: LabeledDataset) -> float:
    if len(test_set) == 0:
        raise InvalidInputError("empty test set")
    return float(np.mean(predict(spec, theta, test_set.features) == test_set.labels))


test_accuracy.__test__ = False  # not a pytest test despite the name


@dataclass
class RoundRecord:
    t: int
    test_accuracy: float
    gradient_dissimilarity: float
    mean_honest_loss: float
    aggregate_norm: float
    wall_clock_ms: int = 0

    # Columns written to CSV; wall-clock time is excluded to keep files reproducible.
    CSV_FIELDS = ("t", "test_accuracy", "gradient_dissimilarity", "mean_honest_loss", "aggregate_norm")

    def csv_row(self) -> list[str]:
        return [str(self.t)] + [repr(float(getattr(self, k))) for k in self.CSV_FIELDS[1:]]


@dataclass
class TrainSettings:
    batch_size: int | None = 32
    beta: float = 0.9
    clip: float = 5.0
    clip_target: str = "gradient"
    l2_reg: float = 1e-4
    schedule: str = "inverse_step"
    schedule_params: dict = field(default_factory=dict)
    max_workers: int = 1

    def lr(self, t: int) -> float:
        return lr_schedule(self.schedule, t, **self.schedule_params)

    def step_kwargs(self) -> dict:
        return dict(
            batch_size=self.batch_size,
            beta=self.beta,
            clip_c=self.clip,
            l2_reg=self.l2_reg,
            clip_target=self.clip_target,
        )


@dataclass
class TrainState:
    theta: np.ndarray
    honest: list[LocalWorker]
    byzantine: list[LocalWorker] = field(default_factory=list)
    t: int = 0

    @property
    def honest_momenta(self) -> np.ndarray:
        return np.stack([w.momentum for w in self.honest])


@dataclass
class Simulation:
    """Everything a round needs besides the mutable :class:`TrainState`."""

    spec: ModelSpec
    n: int
    f: int
    declared_f: int
    aggregator: Callable[[UpdateSet], np.ndarray]
    preaggregator: Callable[[UpdateSet, int], UpdateSet]
    attack: Callable[[AttackContext], np.ndarray]
    settings: TrainSettings
    test_set: LabeledDataset
    train_set: LabeledDataset
    honest_sizes: Sequence[int]
    seed: int = 0


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, records: list[RoundRecord]):
        super().__init__(message)
        self.records = records


def _honest_phase(sim: Simulation, state: TrainState) -> np.ndarray:
    kw = sim.settings.step_kwargs()
    if sim.settings.max_workers > 1 and len(state.honest) > 1:
        with ThreadPoolExecutor(max_workers=sim.settings.max_workers) as pool:
            rows = list(pool.map(lambda w: w.step(sim.spec, state.theta, **kw).copy(), state.honest))
    else:
        rows = [w.step(sim.spec, state.theta, **kw).copy() for w in state.honest]
    return np.stack(rows)


def run_round(state: TrainState, sim: Simulation) -> RoundRecord:
    """Advance ``state`` by one round in place and return its metrics."""
    start = time.perf_counter()
    t = state.t + 1
    honest = _honest_phase(sim, state)
    # The attack only ever sees a finished honest phase.
    ctx = AttackContext(
        honest_updates=honest,
        n=sim.n,
        f=sim.f,
        round=t,
        spec=sim.spec,
        theta=state.theta,
        byz_workers=state.byzantine,
        step_kwargs=sim.settings.step_kwargs(),
    )
    byz = sim.attack(ctx) if sim.f > 0 else np.empty((0, honest.shape[1]))
    if byz.shape != (sim.f, honest.shape[1]):
        raise InvalidInputError(f"attack produced shape {byz.shape}, expected {(sim.f, honest.shape[1])}")
    updates = UpdateSet(np.vstack([honest, byz]), sim.declared_f)
    updates = sim.preaggregator(updates, stream_id("bucketing", t, sim.seed) % (2**63))
    agg = sim.aggregator(updates)

    theta = state.theta - sim.settings.lr(t) * agg
    state.theta = theta
    state.t = t
    return RoundRecord(
        t=t,
        test_accuracy=test_accuracy(sim.spec, theta, sim.test_set),
        gradient_dissimilarity=gradient_dissimilarity(honest, sim.honest_sizes),
        mean_honest_loss=batch_loss(sim.spec, theta, sim.train_set.features, sim.train_set.labels),
        aggregate_norm=float(np.linalg.norm(agg)),
        wall_clock_ms=int(round((time.perf_counter() - start) * 1000)),
    )


def train(state: TrainState, sim: Simulation, rounds: int, on_round=None) -> list[RoundRecord]:
    """Run ``rounds`` rounds, raising :class:`TrainingAborted` on solver failure."""
    records: list[RoundRecord] = []
    for _ in range(rounds):
        try:
            rec = run_round(state, sim)
        except ConvergenceError as exc:
            raise TrainingAborted(f"round {state.t + 1}: {exc}", records) from exc
        if not all(math.isfinite(v) for v in (rec.mean_honest_loss, rec.aggregate_norm)):
            records.append(rec)
            raise TrainingAborted(f"round {rec.t}: non-finite metrics", records)
        records.append(rec)
        if on_round is not None:
            on_round(rec)
    return records


def run_averages(records: Sequence[RoundRecord]) -> dict[str, float]:
    if not records:
        return {"test_accuracy": float("nan"), "gradient_dissimilarity": float("nan")}
    return {
        "test_accuracy": float(np.mean([r.test_accuracy for r in records])),
        "gradient_dissimilarity": float(np.mean([r.gradient_dissimilarity for r in records])),
    }
