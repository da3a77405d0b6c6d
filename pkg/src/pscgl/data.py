"""Graph and dataset representations, TUDataset-format ingestion, and
class-incremental task construction.

The on-disk layout is the TUDataset text convention: whitespace/comma
separated values, 1-based indices, one global node numbering shared by
`<DS>_A.txt` and `<DS>_graph_indicator.txt`.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ContractViolation,
    FormatError,
    IngestionError,
    SplitError,
    UnusableDatasetError,
    ValidationError,
)
from .rng import substream

log = logging.getLogger(__name__)

CONTINUOUS = "continuous"
BINARY = "binary"


def exact_fraction(x: float) -> Fraction:
    """Snap a float to the short decimal/rational it was meant to be.

    Ratios like 0.3 do not round-trip through binary floats; naive
    `ceil((1 - r) * n)` is off by one exactly at the integer boundaries the
    stride and split formulas care about.
    """
    return Fraction(x).limit_denominator(10**6)


@dataclass(frozen=True)
class Graph:
    """One undirected graph sample.

    Edges are canonical unordered pairs (min, max), each stored once, no
    self-loops. `features` has one row per node.
    """

    node_count: int
    edges: frozenset[tuple[int, int]]
    features: np.ndarray
    label: int

    def __post_init__(self):
        if self.node_count < 1:
            raise ValidationError("graph must have at least one node")
        feats = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", feats)
        if feats.ndim != 2 or feats.shape[0] != self.node_count:
            raise ValidationError(
                f"feature matrix shape {feats.shape} does not match "
                f"node_count {self.node_count}"
            )
        for u, v in self.edges:
            if u == v:
                raise ValidationError(f"self-loop ({u},{v}) not allowed")
            if not (0 <= u < v < self.node_count):
                raise ValidationError(
                    f"edge ({u},{v}) out of range or not canonical for "
                    f"{self.node_count} nodes"
                )

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def neighbors(self) -> list[list[int]]:
        """Adjacency lists (sorted) for all nodes."""
        adj: list[list[int]] = [[] for _ in range(self.node_count)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        for lst in adj:
            lst.sort()
        return adj

    def with_features(self, features: np.ndarray) -> "Graph":
        """Copy of this graph with a replaced feature matrix (same topology)."""
        return Graph(self.node_count, self.edges, features, self.label)

    def with_label(self, label: int) -> "Graph":
        return Graph(self.node_count, self.edges, self.features, label)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.node_count == other.node_count
            and self.edges == other.edges
            and self.label == other.label
            and np.array_equal(self.features, other.features)
        )

    def __hash__(self):
        return hash((self.node_count, self.edges, self.label))


def canonical_edges(pairs: Iterable[tuple[int, int]]) -> frozenset[tuple[int, int]]:
    """Deduplicate a directed/undirected edge listing into canonical pairs."""
    out = set()
    for u, v in pairs:
        if u == v:
            continue
        out.add((u, v) if u < v else (v, u))
    return frozenset(out)


@dataclass(frozen=True)
class Dataset:
    """Ordered graph collection with contiguous 0-based labels."""

    graphs: tuple[Graph, ...]
    class_count: int
    feature_kind: str
    feature_dim: int

    def __post_init__(self):
        if self.feature_kind not in (CONTINUOUS, BINARY):
            raise ValidationError(f"unknown feature_kind {self.feature_kind!r}")
        if self.class_count < 1:
            raise ValidationError("class_count must be positive")
        for i, g in enumerate(self.graphs):
            if g.feature_dim != self.feature_dim:
                raise ValidationError(
                    f"graph {i} has feature_dim {g.feature_dim}, expected {self.feature_dim}"
                )
            if not (0 <= g.label < self.class_count):
                raise ValidationError(f"graph {i} label {g.label} out of range")
        if self.feature_kind == BINARY:
            for i, g in enumerate(self.graphs):
                vals = np.unique(g.features)
                if not np.isin(vals, (0.0, 1.0)).all():
                    raise ValidationError(
                        f"graph {i} has non-binary feature values {vals[:5]}"
                    )

    def __len__(self) -> int:
        return len(self.graphs)

    def class_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {c: 0 for c in range(self.class_count)}
        for g in self.graphs:
            counts[g.label] += 1
        return counts


@dataclass(frozen=True)
class TaskSplit:
    """One task: its class labels and train/val/test indices into Dataset.graphs."""

    class_labels: frozenset[int]
    train_idx: tuple[int, ...]
    val_idx: tuple[int, ...]
    test_idx: tuple[int, ...]

    def __post_init__(self):
        seen: set[int] = set()
        for part in (self.train_idx, self.val_idx, self.test_idx):
            for i in part:
                if i in seen:
                    raise ValidationError(f"index {i} appears in two splits")
                seen.add(i)

    @property
    def all_idx(self) -> tuple[int, ...]:
        return self.train_idx + self.val_idx + self.test_idx


@dataclass(frozen=True)
class TaskSequence:
    tasks: tuple[TaskSplit, ...]
    total_class_count: int
    dropped_classes: tuple[int, ...] = field(default=())

    def __post_init__(self):
        seen: set[int] = set()
        for t in self.tasks:
            if seen & t.class_labels:
                raise ValidationError("tasks share class labels")
            seen |= t.class_labels

    def seen_classes(self, upto_task: int) -> frozenset[int]:
        """Union of class labels of tasks[0..upto_task] inclusive."""
        out: set[int] = set()
        for t in self.tasks[: upto_task + 1]:
            out |= t.class_labels
        return frozenset(out)


# --------------------------------------------------------------------------
# TUDataset text ingestion / serialization
# --------------------------------------------------------------------------


def _dataset_prefix(directory: str) -> str:
    """Infer the `<DS>` prefix from the `_A.txt` file in `directory`."""
    candidates = [f for f in sorted(os.listdir(directory)) if f.endswith("_A.txt")]
    if not candidates:
        raise IngestionError(f"no *_A.txt file found in {directory}")
    return candidates[0][: -len("_A.txt")]


def _read_lines(path: str) -> list[tuple[int, str]]:
    if not os.path.isfile(path):
        raise IngestionError(f"missing required file: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    return [(no, line.strip()) for no, line in enumerate(raw, start=1) if line.strip()]


def _split_fields(line: str) -> list[str]:
    return line.replace(",", " ").split()


def load_tudataset(directory: str, feature_kind: str) -> Dataset:
    """Load a TUDataset-format directory into a Dataset.

    Node features come from `<DS>_node_attributes.txt` when
    feature_kind="continuous" (the file is then required).  For
    feature_kind="binary", `<DS>_node_labels.txt` is one-hot encoded if
    present; otherwise the attributes file is used and validated to contain
    only {0,1}.
    """
    if feature_kind not in (CONTINUOUS, BINARY):
        raise ContractViolation(f"feature_kind must be continuous|binary, got {feature_kind!r}")
    prefix = _dataset_prefix(directory)

    def fpath(suffix: str) -> str:
        return os.path.join(directory, f"{prefix}_{suffix}.txt")

    indicator_lines = _read_lines(fpath("graph_indicator"))
    label_lines = _read_lines(fpath("graph_labels"))
    edge_lines = _read_lines(fpath("A"))

    node_graph: list[int] = []
    for no, line in indicator_lines:
        try:
            node_graph.append(int(line))
        except ValueError:
            raise FormatError(f"{fpath('graph_indicator')}:{no}: not an integer: {line!r}")
    n_nodes = len(node_graph)
    if n_nodes == 0:
        raise FormatError(f"{fpath('graph_indicator')}: no nodes listed")

    graph_ids = sorted(set(node_graph))
    if len(graph_ids) != len(label_lines):
        raise FormatError(
            f"{fpath('graph_labels')}: {len(label_lines)} labels for "
            f"{len(graph_ids)} graphs in the indicator file"
        )
    gid_to_pos = {gid: pos for pos, gid in enumerate(graph_ids)}

    raw_labels: list[int] = []
    for no, line in label_lines:
        try:
            raw_labels.append(int(line))
        except ValueError:
            raise FormatError(f"{fpath('graph_labels')}:{no}: not an integer: {line!r}")

    # node features
    attr_path = fpath("node_attributes")
    nlab_path = fpath("node_labels")
    if feature_kind == CONTINUOUS:
        if not os.path.isfile(attr_path):
            raise IngestionError(f"missing required file: {attr_path}")
        features = _read_attributes(attr_path, n_nodes)
    else:
        if os.path.isfile(nlab_path):
            features = _one_hot_node_labels(nlab_path, n_nodes)
        elif os.path.isfile(attr_path):
            features = _read_attributes(attr_path, n_nodes)
            bad = ~np.isin(features, (0.0, 1.0))
            if bad.any():
                row = int(np.argwhere(bad)[0][0])
                raise ValidationError(
                    f"{attr_path}: feature_kind=binary but non-binary value at node line {row + 1}"
                )
        else:
            raise IngestionError(f"missing required file: {nlab_path} (or {attr_path})")

    # group nodes per graph, preserving global order
    nodes_of: list[list[int]] = [[] for _ in graph_ids]
    for node, gid in enumerate(node_graph):
        nodes_of[gid_to_pos[gid]].append(node)
    local_index = np.empty(n_nodes, dtype=np.int64)
    for nodes in nodes_of:
        for li, node in enumerate(nodes):
            local_index[node] = li

    edges_of: list[set[tuple[int, int]]] = [set() for _ in graph_ids]
    apath = fpath("A")
    for no, line in edge_lines:
        fields = _split_fields(line)
        if len(fields) != 2:
            raise FormatError(f"{apath}:{no}: expected two node indices: {line!r}")
        try:
            u, v = int(fields[0]) - 1, int(fields[1]) - 1
        except ValueError:
            raise FormatError(f"{apath}:{no}: not integers: {line!r}")
        if not (0 <= u < n_nodes and 0 <= v < n_nodes):
            raise FormatError(f"{apath}:{no}: edge references unknown node: {line!r}")
        if node_graph[u] != node_graph[v]:
            raise FormatError(f"{apath}:{no}: edge crosses graph boundaries: {line!r}")
        if u == v:
            continue
        lu, lv = int(local_index[u]), int(local_index[v])
        edges_of[gid_to_pos[node_graph[u]]].add((min(lu, lv), max(lu, lv)))

    label_map = {lab: i for i, lab in enumerate(sorted(set(raw_labels)))}
    graphs = []
    for pos, nodes in enumerate(nodes_of):
        graphs.append(
            Graph(
                node_count=len(nodes),
                edges=frozenset(edges_of[pos]),
                features=features[nodes],
                label=label_map[raw_labels[pos]],
            )
        )
    return Dataset(
        graphs=tuple(graphs),
        class_count=len(label_map),
        feature_kind=feature_kind,
        feature_dim=features.shape[1],
    )


def _read_attributes(path: str, n_nodes: int) -> np.ndarray:
    lines = _read_lines(path)
    if len(lines) != n_nodes:
        raise FormatError(f"{path}: {len(lines)} attribute rows for {n_nodes} nodes")
    rows = []
    width = None
    for no, line in lines:
        fields = _split_fields(line)
        if width is None:
            width = len(fields)
        elif len(fields) != width:
            raise FormatError(f"{path}:{no}: expected {width} values, got {len(fields)}")
        try:
            rows.append([float(f) for f in fields])
        except ValueError:
            raise FormatError(f"{path}:{no}: not numeric: {line!r}")
    return np.asarray(rows, dtype=np.float64)


def _one_hot_node_labels(path: str, n_nodes: int) -> np.ndarray:
    lines = _read_lines(path)
    if len(lines) != n_nodes:
        raise FormatError(f"{path}: {len(lines)} node labels for {n_nodes} nodes")
    vals = []
    for no, line in lines:
        try:
            vals.append(int(line))
        except ValueError:
            raise FormatError(f"{path}:{no}: not an integer: {line!r}")
    distinct = sorted(set(vals))
    pos = {v: i for i, v in enumerate(distinct)}
    out = np.zeros((n_nodes, len(distinct)), dtype=np.float64)
    for node, v in enumerate(vals):
        out[node, pos[v]] = 1.0
    return out


def save_tudataset(ds: Dataset, directory: str, name: str) -> None:
    """Write a Dataset back out in TUDataset text form.

    Each undirected edge is listed in both directions, matching the format
    convention; features always go to `<name>_node_attributes.txt` with
    full float precision so ingestion round-trips exactly.
    """
    os.makedirs(directory, exist_ok=True)

    def fpath(suffix: str) -> str:
        return os.path.join(directory, f"{name}_{suffix}.txt")

    with open(fpath("graph_indicator"), "w", encoding="utf-8") as ind, open(
        fpath("A"), "w", encoding="utf-8"
    ) as adj, open(fpath("graph_labels"), "w", encoding="utf-8") as lab, open(
        fpath("node_attributes"), "w", encoding="utf-8"
    ) as att:
        offset = 0
        for gi, g in enumerate(ds.graphs, start=1):
            lab.write(f"{g.label}\n")
            for _ in range(g.node_count):
                ind.write(f"{gi}\n")
            for u, v in sorted(g.edges):
                adj.write(f"{offset + u + 1}, {offset + v + 1}\n")
                adj.write(f"{offset + v + 1}, {offset + u + 1}\n")
            for row in g.features:
                att.write(", ".join(f"{x:.17g}" for x in row) + "\n")
            offset += g.node_count


# --------------------------------------------------------------------------
# Class filtering and task construction
# --------------------------------------------------------------------------


def filter_small_classes(ds: Dataset, min_count: int) -> Dataset:
    """Drop classes with fewer than `min_count` graphs and re-remap labels."""
    if min_count < 1:
        raise ContractViolation("min_count must be >= 1")
    counts = ds.class_counts()
    kept = [c for c in range(ds.class_count) if counts[c] >= min_count]
    if len(kept) < 2:
        raise UnusableDatasetError(
            f"only {len(kept)} classes have >= {min_count} graphs; need at least 2"
        )
    if len(kept) == ds.class_count:
        return ds
    remap = {c: i for i, c in enumerate(kept)}
    graphs = tuple(g.with_label(remap[g.label]) for g in ds.graphs if g.label in remap)
    return Dataset(graphs, len(kept), ds.feature_kind, ds.feature_dim)


def _split_counts(n: int, fractions: tuple[Fraction, Fraction, Fraction]) -> tuple[int, int, int]:
    train = math.floor(fractions[0] * n)
    val = math.floor(fractions[1] * n)
    test = n - train - val
    # force every split non-empty (callers guarantee n >= 3)
    if val == 0:
        train -= 1
        val = 1
    if test == 0:
        train -= 1
        test = n - train - val
    if train < 1:
        train, val, test = 1, 1, n - 2
    return train, val, test


def build_task_sequence(
    ds: Dataset,
    classes_per_task: int,
    split_fractions: tuple[float, float, float],
    seed: int,
) -> TaskSequence:
    """Group classes into tasks (ascending label order) and split per class.

    Per class the index list is shuffled with a seed-derived stream, then cut
    into train/val/test by the fractions (floor for train and val, remainder
    to test, at least one graph per split). Trailing classes that cannot fill
    a whole task are dropped and reported via logging.
    """
    fracs = tuple(exact_fraction(f) for f in split_fractions)
    if sum(fracs) != 1:
        raise ContractViolation(f"split fractions must sum to 1, got {split_fractions}")
    if ds.class_count < classes_per_task:
        raise ContractViolation(
            f"dataset has {ds.class_count} classes; cannot form a task of {classes_per_task}"
        )

    by_class: dict[int, list[int]] = {c: [] for c in range(ds.class_count)}
    for i, g in enumerate(ds.graphs):
        by_class[g.label].append(i)
    for c, idxs in by_class.items():
        if len(idxs) < 3:
            raise SplitError(f"class {c} has only {len(idxs)} graphs; need >= 3 to split")

    n_tasks = ds.class_count // classes_per_task
    dropped = tuple(range(n_tasks * classes_per_task, ds.class_count))
    if dropped:
        log.warning("dropping %d trailing classes that cannot fill a task: %s", len(dropped), dropped)

    tasks = []
    for t in range(n_tasks):
        labels = range(t * classes_per_task, (t + 1) * classes_per_task)
        train: list[int] = []
        val: list[int] = []
        test: list[int] = []
        for c in labels:
            idxs = list(by_class[c])
            substream(seed, "split", c).shuffle(idxs)
            n_train, n_val, _ = _split_counts(len(idxs), fracs)
            train.extend(idxs[:n_train])
            val.extend(idxs[n_train : n_train + n_val])
            test.extend(idxs[n_train + n_val :])
        tasks.append(
            TaskSplit(
                class_labels=frozenset(labels),
                train_idx=tuple(train),
                val_idx=tuple(val),
                test_idx=tuple(test),
            )
        )
    return TaskSequence(tuple(tasks), ds.class_count, dropped)
