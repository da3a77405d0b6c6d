"""Experiment configuration: flat `key = value` text with dotted sections.

Example::

    dataset.path = data/synth6
    dataset.name = synth6
    dataset.feature_kind = continuous
    methods = finetune, random, mc, pscgl
    budgets = 10, 20
    ratios = 0.0
    alpha = auto
    perturb.kind = gaussian
    perturb.sigma = 1.1
    perturb.samples = 10
    train.epochs = 50
    train.learning_rate = 0.001
    train.batch_size = 32
    train.dropout = 0.5
    seeds = 123, 124, 125, 126, 127
    output_dir = results

`alpha = auto` follows the budget schedule (0.1 below budget 30, 0.2 from
30 up, always 0.2 for binary features). An optional `backdoor.*` block
enables the attack harness; `perturb.candidates` enables task-1 strength
selection per run.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .backdoor import BackdoorSpec
from .data import BINARY, CONTINUOUS
from .errors import ConfigError
from .perturb import BERNOULLI_FLIP, GAUSSIAN, PerturbSpec

_REQUIRED = ("dataset.path", "dataset.name", "dataset.feature_kind", "methods", "output_dir")


@dataclass
class ExperimentConfig:
    dataset_path: str
    dataset_name: str
    feature_kind: str
    methods: list[str]
    budgets: list[int]
    ratios: list[float]
    alpha: str | float
    perturb: PerturbSpec
    perturb_candidates: list[float]
    epochs: int
    learning_rate: float
    batch_size: int
    dropout: float
    classes_per_task: int
    min_class_count: int
    seeds: list[int]
    output_dir: str
    parallelism: int
    backdoor: BackdoorSpec | None = None

    def resolve_alpha(self, budget: int) -> float:
        if self.alpha != "auto":
            return float(self.alpha)
        if self.feature_kind == BINARY:
            return 0.2
        return 0.2 if budget >= 30 else 0.1


def _parse_kv(path: str) -> dict[str, str]:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{no}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            if not key:
                raise ConfigError(f"{path}:{no}: empty key")
            out[key] = value
    return out


class _Reader:
    def __init__(self, kv: dict[str, str], path: str):
        self.kv = kv
        self.path = path
        self.used: set[str] = set()

    def get(self, key: str, default: str | None = None) -> str | None:
        self.used.add(key)
        return self.kv.get(key, default)

    def require(self, key: str) -> str:
        value = self.get(key)
        if value is None:
            raise ConfigError(f"{self.path}: missing required key {key!r}")
        return value

    def typed(self, key: str, cast, default):
        raw = self.get(key)
        if raw is None:
            return default
        try:
            return cast(raw)
        except (ValueError, TypeError):
            raise ConfigError(f"{self.path}: key {key!r} has invalid value {raw!r}")

    def list_of(self, key: str, cast, default):
        raw = self.get(key)
        if raw is None:
            return default
        try:
            return [cast(part.strip()) for part in raw.split(",") if part.strip()]
        except (ValueError, TypeError):
            raise ConfigError(f"{self.path}: key {key!r} has invalid list value {raw!r}")


def load_config(path: str) -> ExperimentConfig:
    kv = _parse_kv(path)
    r = _Reader(kv, path)
    for key in _REQUIRED:
        r.require(key)

    feature_kind = r.require("dataset.feature_kind")
    if feature_kind not in (CONTINUOUS, BINARY):
        raise ConfigError(f"{path}: dataset.feature_kind must be continuous|binary")

    methods = r.list_of("methods", str, None)
    from .continual import METHODS

    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"{path}: methods: unknown method {m!r}")

    alpha_raw = r.get("alpha", "auto")
    if alpha_raw != "auto":
        try:
            alpha: str | float = float(alpha_raw)
        except ValueError:
            raise ConfigError(f"{path}: key 'alpha' must be a number or 'auto'")
    else:
        alpha = "auto"

    kind_default = GAUSSIAN if feature_kind == CONTINUOUS else BERNOULLI_FLIP
    perturb = PerturbSpec(
        kind=r.get("perturb.kind", kind_default),
        sigma=r.typed("perturb.sigma", float, 1.1),
        flip_prob=r.typed("perturb.flip_prob", float, 0.05),
        sample_count=r.typed("perturb.samples", int, 10),
    )

    backdoor = None
    if r.get("backdoor.enabled", "false").lower() in ("true", "yes", "1"):
        backdoor = BackdoorSpec(
            target_class=r.typed("backdoor.target_class", int, 2),
            attack_task_index=r.typed("backdoor.attack_task_index", int, 1),
            poison_rate=r.typed("backdoor.poison_rate", float, 0.1),
            trigger_dim_fraction=r.typed("backdoor.trigger_dim_fraction", float, 0.3),
            node_fraction=r.typed("backdoor.node_fraction", float, 0.3),
            trigger_value_policy=r.get(
                "backdoor.trigger_value_policy",
                "binary-ones" if feature_kind == BINARY else "continuous-max",
            ),
            seed=r.typed("backdoor.seed", int, 0),
        )

    output_dir = os.environ.get("PSCGL_OUTPUT_ROOT") or r.require("output_dir")

    cfg = ExperimentConfig(
        dataset_path=r.require("dataset.path"),
        dataset_name=r.require("dataset.name"),
        feature_kind=feature_kind,
        methods=methods,
        budgets=r.list_of("budgets", int, [10]),
        ratios=r.list_of("ratios", float, [0.0]),
        alpha=alpha,
        perturb=perturb,
        perturb_candidates=r.list_of("perturb.candidates", float, []),
        epochs=r.typed("train.epochs", int, 50),
        learning_rate=r.typed("train.learning_rate", float, 0.001),
        batch_size=r.typed("train.batch_size", int, 32),
        dropout=r.typed("train.dropout", float, 0.5),
        classes_per_task=r.typed("tasks.classes_per_task", int, 2),
        min_class_count=r.typed("dataset.min_class_count", int, 1),
        seeds=r.list_of("seeds", int, [123, 124, 125, 126, 127]),
        output_dir=output_dir,
        parallelism=r.typed("parallelism", int, 1),
        backdoor=backdoor,
    )
    unknown = set(kv) - r.used
    if unknown:
        raise ConfigError(f"{path}: unknown keys: {sorted(unknown)}")
    if not cfg.seeds:
        raise ConfigError(f"{path}: seeds must be non-empty")
    return cfg
