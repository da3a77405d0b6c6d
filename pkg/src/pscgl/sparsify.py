"""Motif-based graph sparsification: rank nodes by triangle participation
and keep the top (1 - r) fraction as an induced subgraph.

The participation count loop visits every node as a center and every
neighbor pair once, so each triangle contributes three increments to each of
its corners; counts are therefore exactly 3x the number of distinct
triangles a node belongs to. Ranking is unaffected, and tests compare
against 3x a brute-force triple enumeration.
"""

from __future__ import annotations

import math

import numpy as np

from .data import Graph, exact_fraction
from .errors import ContractViolation


def triangle_participation(g: Graph) -> np.ndarray:
    """Per-node motif participation counts (3x triangle membership)."""
    q = np.zeros(g.node_count, dtype=np.int64)
    adj = g.neighbors()
    edges = g.edges
    for u in range(g.node_count):
        nu = adj[u]
        for i in range(len(nu)):
            v = nu[i]
            for j in range(i + 1, len(nu)):
                w = nu[j]
                if (v, w) in edges:  # adj lists are sorted, so v < w
                    q[u] += 1
                    q[v] += 1
                    q[w] += 1
    return q


def kept_nodes(g: Graph, r: float) -> list[int]:
    """Nodes retained at sparsification ratio r, in original index order.

    Keeps the max(1, ceil((1-r)*|V|)) nodes with the highest participation
    counts; ties keep the lower node index.
    """
    if not 0.0 <= r <= 1.0:
        raise ContractViolation(f"sparsification ratio must be in [0,1], got {r}")
    n_keep = max(1, math.ceil((1 - exact_fraction(r)) * g.node_count))
    counts = triangle_participation(g)
    order = np.argsort(-counts, kind="stable")  # descending count, ties by index
    return sorted(int(v) for v in order[:n_keep])


def sparsify(g: Graph, r: float) -> Graph:
    """Induced subgraph on the top-participation nodes; features follow."""
    keep = kept_nodes(g, r)
    if len(keep) == g.node_count:
        return g
    relabel = {old: new for new, old in enumerate(keep)}
    edges = frozenset(
        (relabel[u], relabel[v]) for u, v in g.edges if u in relabel and v in relabel
    )
    return Graph(
        node_count=len(keep),
        edges=edges,
        features=g.features[keep],
        label=g.label,
    )
