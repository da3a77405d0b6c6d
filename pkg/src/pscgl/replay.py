"""Class-balanced replay buffer and the three sampling strategies.

Samplers take the task's training graphs as (dataset_index, graph) pairs
and return per-class index selections; the trainer pairs those with the
(possibly sparsified) graphs before insertion.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import Dataset, Graph, save_tudataset
from .errors import ContractViolation
from .nn.gcn import forward_batch, masked_softmax, normalize_adjacency, seen_mask
from .perturb import PerturbSpec, perturb_features


@dataclass(frozen=True)
class Provenance:
    task_index: int
    dataset_index: int


@dataclass(frozen=True)
class ScoredGraph:
    index: int
    label: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ContractViolation(f"score must be in [0,1], got {self.score}")


@dataclass
class ReplayBuffer:
    """Per-class stores with a fixed budget per class."""

    budget: int
    slots: dict[int, list[tuple[Graph, Provenance]]] = field(default_factory=dict)

    def __post_init__(self):
        if self.budget < 1:
            raise ContractViolation("budget must be >= 1")

    def insert(
        self, task_index: int, selections: dict[int, list[tuple[int, Graph]]]
    ) -> None:
        """Add one slot per new class; classes may never be re-inserted."""
        for label, picks in selections.items():
            if label in self.slots:
                raise ContractViolation(f"class {label} already has a buffer slot")
            if len(picks) > self.budget:
                raise ContractViolation(
                    f"{len(picks)} graphs exceed the per-class budget {self.budget}"
                )
            for _, g in picks:
                if g.label != label:
                    raise ContractViolation(
                        f"graph labeled {g.label} offered to slot {label}"
                    )
            self.slots[label] = [
                (g, Provenance(task_index, idx)) for idx, g in picks
            ]

    def graphs(self) -> list[Graph]:
        """All stored graphs, ascending class label then insertion order."""
        out: list[Graph] = []
        for label in sorted(self.slots):
            out.extend(g for g, _ in self.slots[label])
        return out

    def class_counts(self) -> dict[int, int]:
        return {label: len(items) for label, items in self.slots.items()}

    def total(self) -> int:
        return sum(len(items) for items in self.slots.values())


# --------------------------------------------------------------------------
# scoring
# --------------------------------------------------------------------------


def mean_perturbed_confidence(
    model,
    g: Graph,
    spec: PerturbSpec,
    seen_classes: Iterable[int],
    rng: np.random.Generator,
) -> float:
    """Mean true-label probability over `spec.sample_count` perturbed copies.

    Eval-mode forward, softmax restricted to the seen classes.
    """
    mask = seen_mask(model.class_count, seen_classes)
    if not mask[g.label]:
        raise ContractViolation(f"label {g.label} not among seen classes")
    ahat = normalize_adjacency(g)
    feats = [perturb_features(g.features, spec, rng) for _ in range(spec.sample_count)]
    logits, _ = forward_batch(model, feats, [ahat] * len(feats), mode="eval")
    probs = masked_softmax(logits, mask)
    return float(probs[:, g.label].mean())


def plain_confidences(
    model, items: Sequence[tuple[int, Graph]], seen_classes: Iterable[int]
) -> list[float]:
    """Unperturbed true-label probabilities, eval mode, batched."""
    mask = seen_mask(model.class_count, seen_classes)
    feats = [g.features for _, g in items]
    ahats = [normalize_adjacency(g) for _, g in items]
    logits, _ = forward_batch(model, feats, ahats, mode="eval")
    probs = masked_softmax(logits, mask)
    return [float(probs[i, g.label]) for i, (_, g) in enumerate(items)]


def score_graphs(
    model,
    items: Sequence[tuple[int, Graph]],
    spec: PerturbSpec,
    seen_classes: Iterable[int],
    rng: np.random.Generator,
) -> list[ScoredGraph]:
    """Perturbed-confidence scores, one independent substream per graph."""
    children = rng.spawn(len(items))
    return [
        ScoredGraph(idx, g.label, mean_perturbed_confidence(model, g, spec, seen_classes, child))
        for (idx, g), child in zip(items, children)
    ]


# --------------------------------------------------------------------------
# samplers (all return {class label: [dataset indices]})
# --------------------------------------------------------------------------


def _by_class(items: Sequence[tuple[int, Graph]]) -> dict[int, list[tuple[int, Graph]]]:
    out: dict[int, list[tuple[int, Graph]]] = {}
    for idx, g in items:
        out.setdefault(g.label, []).append((idx, g))
    return out


def stride_positions(n: int, b: int) -> list[int]:
    """Evenly spaced sorted-rank positions floor(i*n/b), i = 0..b-1."""
    if b >= n:
        return list(range(n))
    return [i * n // b for i in range(b)]


def sample_random(
    items: Sequence[tuple[int, Graph]], b: int, rng: np.random.Generator
) -> dict[int, list[int]]:
    """Uniform without-replacement selection of min(b, class size) per class."""
    if b < 1:
        raise ContractViolation("budget must be >= 1")
    out: dict[int, list[int]] = {}
    groups = _by_class(items)
    for label in sorted(groups):
        idxs = [idx for idx, _ in groups[label]]
        take = min(b, len(idxs))
        picked = rng.choice(len(idxs), size=take, replace=False)
        out[label] = sorted(idxs[i] for i in picked)
    return out


def sample_mc(
    model, items: Sequence[tuple[int, Graph]], b: int, seen_classes: Iterable[int]
) -> dict[int, list[int]]:
    """Top-b by plain model confidence per class, ties to lower index."""
    confs = plain_confidences(model, items, seen_classes)
    out: dict[int, list[int]] = {}
    groups = _by_class(items)
    pos_of = {idx: pos for pos, (idx, _) in enumerate(items)}
    for label in sorted(groups):
        ranked = sorted(
            (idx for idx, _ in groups[label]),
            key=lambda idx: (-confs[pos_of[idx]], idx),
        )
        out[label] = ranked[: min(b, len(ranked))]
    return out


def sample_perturbed(
    model,
    items: Sequence[tuple[int, Graph]],
    b: int,
    spec: PerturbSpec,
    seen_classes: Iterable[int],
    rng: np.random.Generator,
) -> dict[int, list[int]]:
    """Perturbed-confidence ranking with evenly spaced rank selection.

    Graphs are scored by mean perturbed confidence, sorted descending per
    class (ties to lower dataset index), then picked at rank positions
    floor(i * n_c / b): a spread from the most confident down, always
    including the top-ranked graph.
    """
    scored = score_graphs(model, items, spec, seen_classes, rng)
    out: dict[int, list[int]] = {}
    by_label: dict[int, list[ScoredGraph]] = {}
    for s in scored:
        by_label.setdefault(s.label, []).append(s)
    for label in sorted(by_label):
        ranked = sorted(by_label[label], key=lambda s: (-s.score, s.index))
        out[label] = [ranked[j].index for j in stride_positions(len(ranked), b)]
    return out


# --------------------------------------------------------------------------
# inspection dump
# --------------------------------------------------------------------------


def dump_buffer(buffer: ReplayBuffer, directory: str, name: str = "buffer") -> None:
    """Write stored graphs as a TUDataset directory plus a provenance index."""
    stored: list[tuple[Graph, Provenance]] = []
    for label in sorted(buffer.slots):
        stored.extend(buffer.slots[label])
    if not stored:
        raise ContractViolation("buffer is empty; nothing to dump")
    graphs = tuple(g for g, _ in stored)
    class_count = max(g.label for g in graphs) + 1
    kind = "binary" if all(np.isin(g.features, (0.0, 1.0)).all() for g in graphs) else "continuous"
    ds = Dataset(graphs, class_count, kind, graphs[0].feature_dim)
    save_tudataset(ds, directory, name)
    with open(os.path.join(directory, f"{name}_provenance.txt"), "w", encoding="utf-8") as fh:
        fh.write("graph, class, task_index, dataset_index\n")
        for i, (g, prov) in enumerate(stored, start=1):
            fh.write(f"{i}, {g.label}, {prov.task_index}, {prov.dataset_index}\n")
