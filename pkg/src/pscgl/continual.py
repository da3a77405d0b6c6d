"""Class-incremental training over a task sequence, per-task evaluation, and
the average-performance / average-forgetting metrics.

One model instance persists across tasks. After each task, replay methods
score and sample the task's training graphs into the buffer (sparsified
first for the pscgl variants); evaluation masks logits to the classes seen
so far, since task identity is unknown at test time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .backdoor import BackdoorSpec, TriggerPattern, attack_success_rate, make_trigger, poison_task
from .data import Dataset, Graph, TaskSequence, build_task_sequence
from .errors import ContractViolation
from .nn.gcn import (
    GcnModel,
    forward_batch,
    init_model,
    masked_log_softmax,
    normalize_adjacency,
    seen_mask,
)
from .nn.optim import AdamState, adam_step, init_adam
from .objective import step_loss_and_grads
from .perturb import PerturbSpec
from .replay import ReplayBuffer, sample_mc, sample_perturbed, sample_random
from .rng import substream
from .sparsify import sparsify

FINETUNE = "finetune"
JOINT = "joint"
RANDOM = "random"
MC = "mc"
PSCGL = "pscgl"
PSCGL_NO_CONSISTENCY = "pscgl-no-consistency"

METHODS = (FINETUNE, JOINT, RANDOM, MC, PSCGL, PSCGL_NO_CONSISTENCY)
REPLAY_METHODS = (RANDOM, MC, PSCGL, PSCGL_NO_CONSISTENCY)
PSCGL_FAMILY = (PSCGL, PSCGL_NO_CONSISTENCY)


@dataclass(frozen=True)
class MethodSpec:
    """Everything that defines one training run apart from the dataset."""

    method: str = PSCGL
    budget: int = 10
    sparsify_ratio: float = 0.0
    consistency_weight: float = 0.1
    perturb: PerturbSpec = field(default_factory=PerturbSpec)
    epochs: int = 50
    learning_rate: float = 0.001
    batch_size: int = 32
    dropout_rate: float = 0.5
    seed: int = 123
    classes_per_task: int = 2
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ContractViolation(f"unknown method {self.method!r}")
        if self.consistency_weight < 0:
            raise ContractViolation("consistency weight must be >= 0")
        if not 0.0 <= self.sparsify_ratio <= 1.0:
            raise ContractViolation("sparsify_ratio must be in [0,1]")
        if self.budget < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ContractViolation("budget, epochs, and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ContractViolation("learning rate must be positive")

    @property
    def uses_buffer(self) -> bool:
        return self.method in REPLAY_METHODS

    @property
    def effective_alpha(self) -> float:
        """Consistency applies to the full pscgl method only."""
        return self.consistency_weight if self.method == PSCGL else 0.0

    def with_perturb(self, perturb: PerturbSpec) -> "MethodSpec":
        return replace(self, perturb=perturb)


@dataclass
class AccuracyMatrix:
    """Lower-triangular a[t][k]: accuracy on task k's test set after task t."""

    rows: list[list[float]] = field(default_factory=list)

    def __post_init__(self):
        for t, row in enumerate(self.rows):
            if len(row) != t + 1:
                raise ContractViolation(f"row {t} must have {t + 1} entries")
            for a in row:
                if not 0.0 <= a <= 1.0:
                    raise ContractViolation(f"accuracy {a} outside [0,1]")

    def append_row(self, row: list[float]) -> None:
        if len(row) != len(self.rows) + 1:
            raise ContractViolation("row length must equal task count")
        self.rows.append(list(row))

    def entry(self, t: int, k: int) -> float:
        """a[t][k] with 1-based task numbering, defined for k <= t."""
        if not 1 <= k <= t <= len(self.rows):
            raise ContractViolation(f"undefined matrix entry ({t},{k})")
        return self.rows[t - 1][k - 1]


def average_performance(m: AccuracyMatrix, t: int) -> float:
    """Mean accuracy over the first t tasks after training task t."""
    if not 1 <= t <= len(m.rows):
        raise ContractViolation(f"row {t} is not populated")
    return float(sum(m.rows[t - 1])) / t


def average_forgetting(m: AccuracyMatrix, t: int) -> float:
    """Mean accuracy change on earlier tasks since they were learned."""
    if t < 2:
        raise ContractViolation("average forgetting is undefined for t < 2")
    if t > len(m.rows):
        raise ContractViolation(f"row {t} is not populated")
    return float(sum(m.rows[t - 1][k] - m.rows[k][k] for k in range(t - 1))) / (t - 1)


# --------------------------------------------------------------------------
# inference helpers
# --------------------------------------------------------------------------


class AhatCache:
    """Normalized-adjacency memo keyed by graph identity.

    Holds a reference to each graph so id() keys can never be recycled.
    """

    def __init__(self):
        self._store: dict[int, tuple[Graph, np.ndarray]] = {}

    def __call__(self, g: Graph) -> np.ndarray:
        hit = self._store.get(id(g))
        if hit is None or hit[0] is not g:
            hit = (g, normalize_adjacency(g))
            self._store[id(g)] = hit
        return hit[1]


def predict(model: GcnModel, graphs: Sequence[Graph], seen_classes: Iterable[int]) -> np.ndarray:
    """Eval-mode argmax predictions restricted to the seen classes."""
    if not graphs:
        raise ContractViolation("cannot predict on an empty graph list")
    mask = seen_mask(model.class_count, seen_classes)
    feats = [g.features for g in graphs]
    ahats = [normalize_adjacency(g) for g in graphs]
    logits, _ = forward_batch(model, feats, ahats, mode="eval")
    return np.argmax(masked_log_softmax(logits, mask), axis=1)


def accuracy(model: GcnModel, graphs: Sequence[Graph], seen_classes: Iterable[int]) -> float:
    preds = predict(model, graphs, seen_classes)
    labels = np.array([g.label for g in graphs])
    return float(np.mean(preds == labels))


def evaluate(
    model: GcnModel, test_sets: Sequence[Sequence[Graph]], seen_classes: Iterable[int]
) -> list[float]:
    """Accuracy row over the test splits of tasks 1..t."""
    for k, graphs in enumerate(test_sets):
        if not graphs:
            raise ContractViolation(f"task {k} has an empty test split")
    return [accuracy(model, graphs, seen_classes) for graphs in test_sets]


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


def train_task(
    model: GcnModel,
    adam: AdamState,
    train_graphs: Sequence[Graph],
    replay_graphs: Sequence[Graph],
    spec: MethodSpec,
    seen_classes: Iterable[int],
    rngs: dict[str, np.random.Generator],
    ahat_of,
) -> GcnModel:
    """Train one task: epochs of shuffled mini-batches, each step combining
    batch CE, CE over all replayed graphs, and (for pscgl) the consistency
    term with freshly drawn perturbations."""
    if not train_graphs:
        raise ContractViolation("training set is empty")
    seen = tuple(seen_classes)
    alpha = spec.effective_alpha
    order = list(range(len(train_graphs)))
    for _ in range(spec.epochs):
        rngs["shuffle"].shuffle(order)
        for start in range(0, len(order), spec.batch_size):
            batch = [train_graphs[i] for i in order[start : start + spec.batch_size]]
            _, grads, _ = step_loss_and_grads(
                model,
                batch,
                replay_graphs,
                seen_classes=seen,
                alpha=alpha,
                perturb_spec=spec.perturb,
                rng_dropout=rngs["dropout"],
                rng_perturb=rngs["perturb"],
                ahat_of=ahat_of,
                update_running=True,
            )
            adam_step(model, grads, adam)
    return model


def train_on_graphs(
    graphs: Sequence[Graph], spec: MethodSpec, seen_classes: Iterable[int], seed: int
) -> GcnModel:
    """Fresh model trained on a flat graph list (no replay); used by the
    perturbation-parameter selection protocol."""
    seen = sorted(seen_classes)
    model = init_model(
        graphs[0].feature_dim, max(seen) + 1, substream(seed, "inner-init"), spec.dropout_rate
    )
    adam = init_adam(model, spec.learning_rate)
    rngs = {
        "shuffle": substream(seed, "inner-shuffle"),
        "dropout": substream(seed, "inner-dropout"),
        "perturb": substream(seed, "inner-consist"),
    }
    return train_task(model, adam, graphs, [], spec, seen, rngs, AhatCache())


@dataclass
class RunResult:
    spec: MethodSpec
    matrix: AccuracyMatrix
    ap: list[float]
    af: list[float | None]
    buffer: ReplayBuffer | None
    task_classes: list[list[int]]
    asr: float | None = None
    asr_trajectory: list[float] = field(default_factory=list)
    trigger: TriggerPattern | None = None
    poisoned_indices: list[int] = field(default_factory=list)

    @property
    def final_ap(self) -> float:
        return self.ap[-1]

    @property
    def final_af(self) -> float | None:
        return self.af[-1]


def run_sequence(
    dataset: Dataset,
    spec: MethodSpec,
    backdoor_spec: BackdoorSpec | None = None,
    task_sequence: TaskSequence | None = None,
) -> RunResult:
    """Full class-incremental run: train, sample/sparsify/insert, evaluate."""
    seq = task_sequence or build_task_sequence(
        dataset, spec.classes_per_task, spec.split_fractions, spec.seed
    )
    width = len(seq.tasks) * spec.classes_per_task
    model = init_model(dataset.feature_dim, width, substream(spec.seed, "init"), spec.dropout_rate)
    adam = init_adam(model, spec.learning_rate)
    buffer = ReplayBuffer(spec.budget) if spec.uses_buffer else None
    ahat_of = AhatCache()

    trigger: TriggerPattern | None = None
    joint_pool: list[Graph] = []
    matrix = AccuracyMatrix()
    asr_traj: list[float] = []
    poisoned_indices: list[int] = []

    for t, task in enumerate(seq.tasks):
        seen = sorted(seq.seen_classes(t))
        train_items: list[tuple[int, Graph]] = [(i, dataset.graphs[i]) for i in task.train_idx]
        if backdoor_spec is not None and t == backdoor_spec.attack_task_index:
            trigger = make_trigger(
                backdoor_spec, dataset.feature_dim, [g.features for _, g in train_items]
            )
            train_items, poisoned_indices = poison_task(
                train_items, backdoor_spec, trigger, substream(spec.seed, "poison")
            )
        train_graphs = [g for _, g in train_items]

        if spec.method == JOINT:
            replay_graphs: list[Graph] = list(joint_pool)
        elif spec.uses_buffer:
            replay_graphs = buffer.graphs()
        else:
            replay_graphs = []

        rngs = {
            "shuffle": substream(spec.seed, "shuffle", t),
            "dropout": substream(spec.seed, "dropout", t),
            "perturb": substream(spec.seed, "consist", t),
        }
        train_task(model, adam, train_graphs, replay_graphs, spec, seen, rngs, ahat_of)

        if spec.uses_buffer:
            if spec.method == RANDOM:
                selections = sample_random(train_items, spec.budget, substream(spec.seed, "sample", t))
            elif spec.method == MC:
                selections = sample_mc(model, train_items, spec.budget, seen)
            else:
                selections = sample_perturbed(
                    model, train_items, spec.budget, spec.perturb, seen,
                    substream(spec.seed, "sample", t),
                )
            graph_by_idx = dict(train_items)
            picks: dict[int, list[tuple[int, Graph]]] = {}
            for label, idxs in selections.items():
                stored = []
                for i in idxs:
                    g = graph_by_idx[i]
                    if spec.method in PSCGL_FAMILY:
                        g = sparsify(g, spec.sparsify_ratio)
                    stored.append((i, g))
                picks[label] = stored
            buffer.insert(t, picks)
        elif spec.method == JOINT:
            joint_pool.extend(train_graphs)

        test_sets = [
            [dataset.graphs[i] for i in seq.tasks[k].test_idx] for k in range(t + 1)
        ]
        matrix.append_row(evaluate(model, test_sets, seen))

        if trigger is not None:
            all_test = [g for graphs in test_sets for g in graphs]
            asr_traj.append(
                attack_success_rate(
                    model, all_test, backdoor_spec, trigger, seen, substream(spec.seed, "asr", t)
                )
            )

    n_tasks = len(seq.tasks)
    ap = [average_performance(matrix, t) for t in range(1, n_tasks + 1)]
    af: list[float | None] = [None] + [
        average_forgetting(matrix, t) for t in range(2, n_tasks + 1)
    ]
    return RunResult(
        spec=spec,
        matrix=matrix,
        ap=ap,
        af=af,
        buffer=buffer,
        task_classes=[sorted(task.class_labels) for task in seq.tasks],
        asr=asr_traj[-1] if asr_traj else None,
        asr_trajectory=asr_traj,
        trigger=trigger,
        poisoned_indices=poisoned_indices,
    )
