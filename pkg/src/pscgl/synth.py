"""Deterministic synthetic molecular-style corpora.

No benchmark data ships with the package, so experiments and the acceptance
suite run on generated corpora written in TUDataset text form. Classes are
bimodal feature clusters (two sub-populations per class) over a shared noisy
background, with mild class-dependent triangle-motif density, which gives
the continual-learning dynamics something real to bite on: tasks interfere,
replay helps, and diversity-aware sampling beats pure top-confidence picks.
"""

from __future__ import annotations

import numpy as np

from .data import BINARY, CONTINUOUS, Dataset, Graph, canonical_edges
from .errors import ContractViolation
from .rng import substream


def _random_topology(
    rng: np.random.Generator, n: int, extra_edge_rate: float, triangles: int
) -> frozenset[tuple[int, int]]:
    """Connected backbone (random tree) + extra edges + planted triangles."""
    pairs: list[tuple[int, int]] = []
    for v in range(1, n):
        pairs.append((int(rng.integers(0, v)), v))
    for _ in range(int(round(extra_edge_rate * n))):
        u, v = rng.integers(0, n, size=2)
        if u != v:
            pairs.append((int(u), int(v)))
    for _ in range(triangles):
        if n < 3:
            break
        tri = rng.choice(n, size=3, replace=False)
        pairs.extend([(int(tri[0]), int(tri[1])), (int(tri[1]), int(tri[2])), (int(tri[0]), int(tri[2]))])
    return canonical_edges(pairs)


def make_corpus(
    kind: str = CONTINUOUS,
    n_classes: int = 6,
    per_class: int | list[int] = 100,
    feature_dim: int = 18,
    node_range: tuple[int, int] = (12, 32),
    seed: int = 7,
    class_separation: float = 3.0,
    pair_gap: float = 2.4,
    easy_push: float = 0.7,
    hard_sep: float = 0.7,
    hard_tilt: float = 0.15,
    hard_fraction: float = 0.5,
    graph_noise: float = 1.25,
    node_noise: float = 1.0,
    feature_scale: float = 1.8,
    spike_prob: float = 0.0,
    spike_scale: float = 3.5,
    flip_noise: float = 0.12,
) -> Dataset:
    """Generate a labeled graph corpus.

    Continuous geometry: consecutive class pairs (0,1), (2,3), ... share a
    pair centroid and are separated along a within-pair axis, so the two
    classes that land in the same incremental task are the hardest to tell
    apart. Each class is bimodal: an "easy" sub-population pushed outward
    along the pair axis, and a "hard" one sitting near the pair midpoint
    where the two classes are separated along a *different* axis. A trained
    model scores the hard mode with systematically lower confidence, and a
    replay set that only covers easy high-confidence graphs cannot represent
    the hard region's orientation. Every graph adds a shared offset of std
    `graph_noise` (the Bayes-error knob), per-node noise, and rare
    heavy-tail spikes that give each feature dimension a realistic extreme
    range. Binary: nodes draw bits from a class profile, then each bit
    flips with probability `flip_noise`.
    """
    if kind not in (CONTINUOUS, BINARY):
        raise ContractViolation(f"unknown corpus kind {kind!r}")
    if isinstance(per_class, int):
        counts = [per_class] * n_classes
    else:
        counts = list(per_class)
        if len(counts) != n_classes:
            raise ContractViolation("per_class list length must equal n_classes")

    rng = substream(seed, "corpus", kind)
    lo, hi = node_range

    if kind == CONTINUOUS:
        n_pairs = (n_classes + 1) // 2
        centroids = np.empty((n_pairs, feature_dim))
        axes = np.empty((n_pairs, feature_dim))       # within-pair (easy) axis
        hard_axes = np.empty((n_pairs, feature_dim))  # orthogonal hard-mode axis
        for p in range(n_pairs):
            v = rng.normal(size=feature_dim)
            centroids[p] = v * (class_separation / np.linalg.norm(v))
            w = rng.normal(size=feature_dim)
            w /= np.linalg.norm(w)
            axes[p] = w
            u = rng.normal(size=feature_dim)
            u -= (u @ w) * w
            hard_axes[p] = u / np.linalg.norm(u)
        protos = np.empty((n_classes, 2, feature_dim))  # [class, easy|hard]
        for c in range(n_classes):
            p, side = c // 2, 1.0 - 2.0 * (c % 2)
            protos[c, 0] = centroids[p] + side * (pair_gap / 2.0 + easy_push) * axes[p]
            protos[c, 1] = (
                centroids[p]
                + side * hard_tilt * axes[p]
                + side * (hard_sep / 2.0) * hard_axes[p]
            )
    else:
        profiles = np.clip(rng.random((n_classes, feature_dim)), 0.08, 0.92)

    graphs: list[Graph] = []
    for c in range(n_classes):
        for _ in range(counts[c]):
            n = int(rng.integers(lo, hi + 1))
            triangles = 2 + (c % 3) * 2 + int(rng.integers(0, 3))
            edges = _random_topology(rng, n, extra_edge_rate=0.6, triangles=triangles)
            if kind == CONTINUOUS:
                mode = 1 if rng.random() < hard_fraction else 0
                offset = rng.normal(0.0, graph_noise, size=feature_dim)
                feats = protos[c, mode] + offset + rng.normal(0.0, node_noise, size=(n, feature_dim))
                if spike_prob > 0.0:
                    spikes = rng.random((n, feature_dim)) < spike_prob
                    feats = np.where(
                        spikes, feats + rng.normal(0.0, spike_scale, size=(n, feature_dim)), feats
                    )
                # scale is invisible to the BN-normalized network; it only sets
                # how coarse a fixed-sigma feature perturbation is relative to
                # the data geometry
                feats = feats * feature_scale
            else:
                feats = (rng.random((n, feature_dim)) < profiles[c]).astype(np.float64)
                flips = rng.random((n, feature_dim)) < flip_noise
                feats = np.where(flips, 1.0 - feats, feats)
            graphs.append(Graph(n, edges, feats, c))

    return Dataset(tuple(graphs), n_classes, kind, feature_dim)
