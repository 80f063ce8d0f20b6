"""Local worker protocol: sample a batch, (re)weight, clip, update momentum."""

from __future__ import annotations

import numpy as np

from .data import WorkerShard
from .model import ModelSpec, weighted_batch_gradient
from .numerics import InvalidInputError
from .objective import wola_weights

LOSS_MODES = ("standard", "wola")
CLIP_TARGETS = ("gradient", "momentum")


def clip(g, c: float) -> np.ndarray:
    """Project ``g`` onto the l2 ball of radius ``c`` (``c`` may be ``inf``)."""
    if not c > 0:
        raise InvalidInputError("clip radius must be positive")
    g = np.asarray(g, dtype=np.float64)
    norm = float(np.linalg.norm(g))
    if norm <= c:
        return g
    return g * (c / norm)


def flip_labels(labels, num_classes: int) -> np.ndarray:
    return num_classes - 1 - np.asarray(labels, dtype=np.int64)


class LocalWorker:
    """One worker's shard, RNG stream and momentum buffer.

    ``label_map`` (an index array) relabels the shard as ``y -> label_map[y]``
    before anything is computed; the label-flip attack uses it. Under WoLA
    the local distribution is taken from the relabelled shard.
    """

    def __init__(
        self,
        shard: WorkerShard,
        rng: np.random.Generator,
        dim: int,
        loss_mode: str = "standard",
        q=None,
        label_map=None,
    ):
        if shard.size < 1:
            raise InvalidInputError("worker shard is empty")
        if loss_mode not in LOSS_MODES:
            raise InvalidInputError(f"loss_mode must be one of {LOSS_MODES}")
        if loss_mode == "wola" and q is None:
            raise InvalidInputError("wola needs a training objective q")
        self.features = shard.data.features
        self.labels = shard.data.labels
        if label_map is not None:
            self.labels = np.asarray(label_map, dtype=np.int64)[self.labels]
        self.num_classes = shard.data.num_classes
        self.loss_mode = loss_mode
        self.q = None if q is None else np.asarray(q, dtype=np.float64)
        self.local_dist = np.bincount(self.labels, minlength=self.num_classes) / self.labels.size
        self.rng = rng
        self.momentum = np.zeros(dim)

    def sample_weights(self, labels) -> np.ndarray | None:
        if self.loss_mode == "standard":
            return None
        return wola_weights(self.q, self.local_dist, labels)

    def gradient(self, spec: ModelSpec, theta, batch_size: int | None, l2_reg: float) -> np.ndarray:
        if batch_size is None:
            x, y = self.features, self.labels
        else:
            idx = self.rng.integers(0, self.labels.size, size=batch_size)
            x, y = self.features[idx], self.labels[idx]
        return weighted_batch_gradient(spec, theta, x, y, self.sample_weights(y), l2_reg)

    def step(
        self,
        spec: ModelSpec,
        theta,
        batch_size: int | None,
        beta: float,
        clip_c: float,
        l2_reg: float,
        clip_target: str = "gradient",
    ) -> np.ndarray:
        """One heavy-ball momentum update; returns (and stores) the new momentum."""
        if not 0 <= beta < 1:
            raise InvalidInputError("momentum beta must lie in [0, 1)")
        if clip_target not in CLIP_TARGETS:
            raise InvalidInputError(f"clip_target must be one of {CLIP_TARGETS}")
        g = self.gradient(spec, theta, batch_size, l2_reg)
        if clip_target == "gradient":
            g = clip(g, clip_c)
        self.momentum = beta * self.momentum + (1.0 - beta) * g
        if clip_target == "momentum":
            self.momentum = clip(self.momentum, clip_c)
        return self.momentum


def honest_step(
    spec: ModelSpec,
    theta,
    worker: LocalWorker,
    batch_size: int | None,
    beta: float,
    clip_c: float,
    l2_reg: float,
    clip_target: str = "gradient",
) -> np.ndarray:
    return worker.step(spec, theta, batch_size, beta, clip_c, l2_reg, clip_target)
