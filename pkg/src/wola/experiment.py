"""Experiment configuration and the per-seed pipeline behind the CLI."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from .aggregation import AGGREGATORS, get_aggregator
from .attacks import ATTACKS, flip_map, get_attack
from .data import (
    LabeledDataset,
    dirichlet_partition,
    generate_synthetic,
    label_distribution,
    load_csv_dataset,
    train_test_split,
)
from .model import KINDS, ModelSpec, init_params
from .numerics import InvalidInputError
from .objective import (
    OBJECTIVE_MODES,
    aggregate_objective_gm,
    build_objective,
    objective_attack_worst,
)
from .preagg import PREAGGREGATORS, get_preaggregator
from .seeding import stream, stream_id
from .training import (
    SCHEDULES,
    RoundRecord,
    Simulation,
    TrainSettings,
    TrainState,
    run_averages,
    train,
)
from .worker import CLIP_TARGETS, LocalWorker

LOSS_MODES = ("standard", "wola", "wola_dagger")


class ConfigError(InvalidInputError):
    """Invalid configuration; ``field`` names the offending (dotted) key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class DatasetConfig:
    kind: str = "synthetic"
    num_classes: int = 5
    feature_dim: int = 10
    samples_per_class: int = 200
    class_separation: float = 3.0
    test_samples_per_class: int = 100
    path: str | None = None
    label_column: int = -1
    test_fraction: float = 0.3


@dataclass
class ModelConfig:
    kind: str = "softmax_regression"
    hidden_dim: int = 16
    activation: str = "tanh"


@dataclass
class ObjectiveConfig:
    mode: str = "global"
    q: list[float] | None = None


@dataclass
class AttackConfig:
    name: str = "none"
    foe_epsilon: float = 1.1
    alie_z: float | None = None


@dataclass
class OptimizerConfig:
    rounds: int = 300
    batch_size: int | None = 32
    beta: float = 0.9
    clip: float = 5.0
    clip_target: str = "gradient"
    l2_reg: float = 1e-4
    schedule: str = "inverse_step"
    lr: float = 0.75
    lr_period: int = 50
    lr_hi: float = 0.25
    lr_lo: float = 0.025
    lr_switch: int = 1500


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    n: int = 17
    f: int = 0
    declared_f: int | None = None
    alpha: float = 0.3
    equal_size: bool = True
    loss_mode: str = "standard"
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    aggregator: str = "mean"
    preaggregator: str = "none"
    attack: AttackConfig = field(default_factory=AttackConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    gm_tol: float = 1e-9
    gm_max_iter: int = 1000
    max_workers: int = 1
    output: str = "results"

    @property
    def effective_declared_f(self) -> int:
        return self.f if self.declared_f is None else self.declared_f

    def validate(self) -> "ExperimentConfig":
        def need(cond, name, msg):
            if not cond:
                raise ConfigError(name, msg)

        d, m, o = self.dataset, self.model, self.optimizer
        need(d.kind in ("synthetic", "csv"), "dataset.kind", "must be 'synthetic' or 'csv'")
        if d.kind == "synthetic":
            need(d.num_classes >= 2, "dataset.num_classes", "must be >= 2")
            need(d.feature_dim >= 1, "dataset.feature_dim", "must be >= 1")
            need(d.samples_per_class >= 1, "dataset.samples_per_class", "must be >= 1")
            need(d.test_samples_per_class >= 1, "dataset.test_samples_per_class", "must be >= 1")
            need(d.class_separation > 0, "dataset.class_separation", "must be positive")
        else:
            need(bool(d.path), "dataset.path", "required when dataset.kind is 'csv'")
            need(0 < d.test_fraction < 1, "dataset.test_fraction", "must lie in (0, 1)")
        need(m.kind in KINDS, "model.kind", f"must be one of {list(KINDS)}")
        if m.kind == "mlp":
            need(m.hidden_dim >= 1, "model.hidden_dim", "must be >= 1")
            need(m.activation in ("relu", "tanh"), "model.activation", "must be 'relu' or 'tanh'")
        need(self.n >= 1, "n", "must be >= 1")
        need(self.f >= 0, "f", "must be >= 0")
        need(2 * self.f < self.n, "f", f"threat model requires f < n/2 (got f={self.f}, n={self.n})")
        dec = self.effective_declared_f
        need(0 <= dec and 2 * dec < self.n, "declared_f", f"must satisfy 0 <= declared_f < n/2 (got {dec})")
        need(self.alpha > 0, "alpha", "must be positive")
        need(self.loss_mode in LOSS_MODES, "loss_mode", f"must be one of {list(LOSS_MODES)}")
        need(self.objective.mode in OBJECTIVE_MODES, "objective.mode", f"must be one of {list(OBJECTIVE_MODES)}")
        if self.objective.mode == "provided":
            need(self.objective.q is not None, "objective.q", "required when objective.mode is 'provided'")
        need(self.aggregator in AGGREGATORS, "aggregator", f"must be one of {sorted(AGGREGATORS)}")
        need(self.preaggregator in PREAGGREGATORS, "preaggregator", f"must be one of {list(PREAGGREGATORS)}")
        need(self.attack.name in ATTACKS, "attack.name", f"must be one of {list(ATTACKS)}")
        need(self.attack.foe_epsilon >= 0, "attack.foe_epsilon", "must be nonnegative")
        need(o.rounds >= 1, "optimizer.rounds", "must be >= 1")
        need(o.batch_size is None or o.batch_size >= 1, "optimizer.batch_size", "must be >= 1 or null (full batch)")
        need(0 <= o.beta < 1, "optimizer.beta", "must lie in [0, 1)")
        need(o.clip > 0, "optimizer.clip", "must be positive (use .inf to disable)")
        need(o.clip_target in CLIP_TARGETS, "optimizer.clip_target", f"must be one of {list(CLIP_TARGETS)}")
        need(o.l2_reg >= 0, "optimizer.l2_reg", "must be nonnegative")
        need(o.schedule in SCHEDULES, "optimizer.schedule", f"must be one of {list(SCHEDULES)}")
        need(o.lr > 0 and o.lr_hi > 0 and o.lr_lo > 0, "optimizer.lr", "learning rates must be positive")
        need(o.lr_period >= 1 and o.lr_switch >= 1, "optimizer.lr_period", "period and switch must be >= 1")
        need(len(self.seeds) >= 1, "seeds", "need at least one seed")
        need(self.gm_tol > 0 and self.gm_max_iter >= 1, "gm_tol", "tolerance and budget must be positive")
        need(self.max_workers >= 1, "max_workers", "must be >= 1")
        return self

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        return _build(cls, raw or {}, "").validate()

    @classmethod
    def from_yaml(cls, text: str) -> "ExperimentConfig":
        raw = yaml.safe_load(text)
        if raw is not None and not isinstance(raw, dict):
            raise ConfigError("<root>", "config must be a mapping")
        return cls.from_dict(raw or {})

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_yaml(fh.read())


_NESTED = {
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "objective": ObjectiveConfig,
    "attack": AttackConfig,
    "optimizer": OptimizerConfig,
}


def _coerce(value, typ: str, name: str):
    optional = "None" in typ
    if value is None:
        if optional:
            return None
        raise ConfigError(name, "must not be null")
    base = typ.replace("| None", "").strip()
    try:
        if base == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if base == "float":
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if base == "bool":
            if not isinstance(value, bool):
                raise ValueError
            return value
        if base == "str":
            if not isinstance(value, str):
                raise ValueError
            return value
        if base == "list[int]":
            return [_coerce(v, "int", name) for v in value]
        if base == "list[float]":
            return [_coerce(v, "float", name) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected {base}, got {value!r}") from None
    raise ConfigError(name, f"unsupported type {typ}")


def _build(cls, raw: dict, prefix: str):
    if not isinstance(raw, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected a mapping")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(prefix + unknown[0], "unknown field")
    kwargs = {}
    for name, value in raw.items():
        full = prefix + name
        if name in _NESTED and cls is ExperimentConfig:
            kwargs[name] = _build(_NESTED[name], value or {}, full + ".")
        else:
            kwargs[name] = _coerce(value, str(known[name].type), full)
    return cls(**kwargs)


def set_field(config: ExperimentConfig, dotted: str, value) -> ExperimentConfig:
    """Copy of ``config`` with one (dotted) field replaced and re-validated."""
    raw = config.to_dict()
    node = raw
    parts = dotted.split(".")
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(dotted, "unknown field")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(dotted, "unknown field")
    node[parts[-1]] = value
    return ExperimentConfig.from_dict(raw)


def field_type(dotted: str) -> str:
    cls = ExperimentConfig
    parts = dotted.split(".")
    for p in parts[:-1]:
        if p not in _NESTED or cls is not ExperimentConfig:
            raise ConfigError(dotted, "unknown field")
        cls = _NESTED[p]
    fields = {f.name: str(f.type) for f in dataclasses.fields(cls)}
    if parts[-1] not in fields or parts[-1] in _NESTED and cls is ExperimentConfig:
        raise ConfigError(dotted, "unknown field")
    return fields[parts[-1]]


def build_datasets(config: ExperimentConfig, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    d = config.dataset
    if d.kind == "synthetic":
        train_set = generate_synthetic(
            d.num_classes, d.feature_dim, d.samples_per_class, d.class_separation, stream_id("data", 0, seed)
        )
        test_set = generate_synthetic(
            d.num_classes, d.feature_dim, d.test_samples_per_class, d.class_separation, stream_id("data", 1, seed)
        )
        return train_set, test_set
    full = load_csv_dataset(d.path, d.label_column)
    return train_test_split(full, d.test_fraction, stream_id("split", 0, seed))


def training_objective(config: ExperimentConfig, honest_shards) -> np.ndarray | None:
    """The ``q`` broadcast before training, or ``None`` for the standard loss."""
    if config.loss_mode == "standard":
        return None
    dists = [label_distribution(s) for s in honest_shards]
    sizes = [s.size for s in honest_shards]
    if config.loss_mode == "wola_dagger":
        subs = objective_attack_worst(dists, sizes, config.f, config.n)
        return aggregate_objective_gm(subs, tol=config.gm_tol, max_iter=config.gm_max_iter)
    num_classes = len(dists[0])
    return build_objective(config.objective.mode, dists, sizes, config.objective.q, num_classes)


def build_simulation(config: ExperimentConfig, seed: int) -> tuple[TrainState, Simulation]:
    config.validate()
    train_set, test_set = build_datasets(config, seed)
    h = config.n - config.f
    honest_shards = dirichlet_partition(train_set, h, config.alpha, stream_id("partition", 0, seed), config.equal_size)
    m = config.model
    spec = ModelSpec(m.kind, train_set.feature_dim, train_set.num_classes, m.hidden_dim if m.kind == "mlp" else 0, m.activation)
    theta = init_params(spec, stream_id("init", 0, seed))

    q = training_objective(config, honest_shards)
    worker_mode = "standard" if q is None else "wola"
    honest = [
        LocalWorker(s, stream("honest", i, seed), spec.num_params, worker_mode, q)
        for i, s in enumerate(honest_shards)
    ]
    byzantine = []
    if config.attack.name == "lf" and config.f > 0:
        byz_shards = dirichlet_partition(
            train_set, config.f, config.alpha, stream_id("partition", 1, seed), config.equal_size
        )
        flip = flip_map(train_set.num_classes)
        byzantine = [
            LocalWorker(s, stream("byzantine", j, seed), spec.num_params, worker_mode, q, label_map=flip)
            for j, s in enumerate(byz_shards)
        ]

    o = config.optimizer
    settings = TrainSettings(
        batch_size=o.batch_size,
        beta=o.beta,
        clip=o.clip,
        clip_target=o.clip_target,
        l2_reg=o.l2_reg,
        schedule=o.schedule,
        schedule_params=dict(base=o.lr, period=o.lr_period, hi=o.lr_hi, lo=o.lr_lo, switch=o.lr_switch),
        max_workers=config.max_workers,
    )
    dec = config.effective_declared_f
    sim = Simulation(
        spec=spec,
        n=config.n,
        f=config.f,
        declared_f=dec,
        aggregator=get_aggregator(config.aggregator, config.gm_tol, config.gm_max_iter),
        preaggregator=get_preaggregator(config.preaggregator, config.n, dec),
        attack=get_attack(config.attack.name, config.attack.foe_epsilon, config.attack.alie_z),
        settings=settings,
        test_set=test_set,
        train_set=LabeledDataset(
            np.concatenate([s.data.features for s in honest_shards]),
            np.concatenate([s.data.labels for s in honest_shards]),
            train_set.num_classes,
        ),
        honest_sizes=[s.size for s in honest_shards],
        seed=seed,
    )
    return TrainState(theta=theta, honest=honest, byzantine=byzantine), sim


def run_experiment(config: ExperimentConfig, seed: int, on_round=None) -> list[RoundRecord]:
    state, sim = build_simulation(config, seed)
    return train(state, sim, config.optimizer.rounds, on_round)


def summarize(per_seed: dict[int, list[RoundRecord]]) -> dict[str, Any]:
    """Run-averaged metrics per seed, plus mean and population s.d. across seeds."""
    seeds = sorted(per_seed)
    avgs = {s: run_averages(per_seed[s]) for s in seeds}
    out: dict[str, Any] = {"seeds": seeds, "per_seed": {str(s): avgs[s] for s in seeds}}
    for key in ("test_accuracy", "gradient_dissimilarity"):
        vals = np.array([avgs[s][key] for s in seeds])
        out[key] = {"mean": float(vals.mean()), "sd": float(vals.std(ddof=0))}
    return out
