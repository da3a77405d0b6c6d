"""Feature-space backdoor attack harness: trigger construction, training-set
poisoning for one task, and attack-success-rate evaluation.

The attack writes a fixed value pattern onto a random subset of feature
dimensions for a random subset of nodes; topology is never modified.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import Graph, exact_fraction
from .errors import ContractViolation
from .nn.gcn import forward_batch, masked_log_softmax, normalize_adjacency, seen_mask
from .rng import substream

BINARY_ONES = "binary-ones"
CONTINUOUS_MAX = "continuous-max"


@dataclass(frozen=True)
class BackdoorSpec:
    target_class: int
    attack_task_index: int = 1  # 0-based; default: the second task
    poison_rate: float = 0.1
    trigger_dim_fraction: float = 0.3
    node_fraction: float = 0.3
    trigger_value_policy: str = CONTINUOUS_MAX
    seed: int = 0

    def __post_init__(self):
        for name in ("poison_rate", "trigger_dim_fraction", "node_fraction"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ContractViolation(f"{name} must be in (0,1], got {v}")
        if self.trigger_value_policy not in (BINARY_ONES, CONTINUOUS_MAX):
            raise ContractViolation(f"unknown trigger policy {self.trigger_value_policy!r}")
        if self.attack_task_index < 0:
            raise ContractViolation("attack_task_index must be >= 0")


@dataclass(frozen=True)
class TriggerPattern:
    """Resolved trigger: which feature dimensions, and what value each gets."""

    dims: tuple[int, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.dims) != len(self.values):
            raise ContractViolation("dims and values must align")


def make_trigger(
    spec: BackdoorSpec, feature_dim: int, train_features: Sequence[np.ndarray]
) -> TriggerPattern:
    """Draw the trigger dimensions once from the backdoor seed.

    Values: 1.0 under the binary policy, per-dimension maximum over the
    supplied training feature matrices under the continuous policy.
    """
    k = max(1, round(spec.trigger_dim_fraction * feature_dim))
    dims = substream(spec.seed, "trigger-dims").choice(feature_dim, size=k, replace=False)
    dims = tuple(int(d) for d in np.sort(dims))
    if spec.trigger_value_policy == BINARY_ONES:
        values = tuple(1.0 for _ in dims)
    else:
        col_max = np.max(np.concatenate(list(train_features), axis=0), axis=0)
        values = tuple(float(col_max[d]) for d in dims)
    return TriggerPattern(dims, values)


def inject_trigger(
    g: Graph, spec: BackdoorSpec, trigger: TriggerPattern, rng: np.random.Generator
) -> Graph:
    """Write the trigger onto ceil(node_fraction * n) uniformly chosen nodes."""
    for d in trigger.dims:
        if not 0 <= d < g.feature_dim:
            raise ContractViolation(f"trigger dimension {d} outside feature width")
    n_nodes = max(1, math.ceil(exact_fraction(spec.node_fraction) * g.node_count))
    rows = rng.choice(g.node_count, size=n_nodes, replace=False)
    feats = g.features.copy()
    feats[np.ix_(rows, list(trigger.dims))] = np.asarray(trigger.values)
    return g.with_features(feats)


def poison_task(
    task_train: Sequence[tuple[int, Graph]],
    spec: BackdoorSpec,
    trigger: TriggerPattern,
    rng: np.random.Generator,
) -> tuple[list[tuple[int, Graph]], list[int]]:
    """Poison ceil(poison_rate * n) non-target training graphs.

    Returns the training list with poisoned graphs substituted in place
    (trigger injected, label switched to the target class) and the dataset
    indices that were poisoned.
    """
    labels = {g.label for _, g in task_train}
    if spec.target_class not in labels:
        raise ContractViolation(
            f"target class {spec.target_class} is not part of the attacked task {sorted(labels)}"
        )
    n = len(task_train)
    m = math.ceil(exact_fraction(spec.poison_rate) * n)
    eligible = [pos for pos, (_, g) in enumerate(task_train) if g.label != spec.target_class]
    m = min(m, len(eligible))
    chosen = set(
        int(eligible[i]) for i in rng.choice(len(eligible), size=m, replace=False)
    )
    out: list[tuple[int, Graph]] = []
    poisoned_idx: list[int] = []
    for pos, (idx, g) in enumerate(task_train):
        if pos in chosen:
            bad = inject_trigger(g, spec, trigger, rng).with_label(spec.target_class)
            out.append((idx, bad))
            poisoned_idx.append(idx)
        else:
            out.append((idx, g))
    return out, poisoned_idx


def attack_success_rate(
    model,
    test_graphs: Sequence[Graph],
    spec: BackdoorSpec,
    trigger: TriggerPattern,
    seen_classes: Iterable[int],
    rng: np.random.Generator,
) -> float:
    """Fraction of triggered non-target test graphs predicted as the target.

    The backdoored evaluation set contains every test graph whose true label
    differs from the target class, with the trigger injected.
    """
    victims = [g for g in test_graphs if g.label != spec.target_class]
    if not victims:
        raise ContractViolation("no non-target test graphs to backdoor")
    mask = seen_mask(model.class_count, seen_classes)
    triggered = [inject_trigger(g, spec, trigger, child) for g, child in zip(victims, rng.spawn(len(victims)))]
    feats = [g.features for g in triggered]
    ahats = [normalize_adjacency(g) for g in triggered]
    logits, _ = forward_batch(model, feats, ahats, mode="eval")
    preds = np.argmax(masked_log_softmax(logits, mask), axis=1)
    return float(np.mean(preds == spec.target_class))
