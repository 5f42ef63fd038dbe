"""Patch-feature kNN graph construction and Leiden community detection."""
from __future__ import annotations

import logging
import random
from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import DimensionError, SoftPatchMask

logger = logging.getLogger(__name__)

# strictly-positive move threshold so float noise cannot cycle the optimiser
_GAIN_EPS = 1e-12


@dataclass
class PatchGraph:
    """Undirected weighted graph over patch indices."""

    n_nodes: int
    edges: list  # of (a, b, weight) with a < b

    def __post_init__(self):
        if self.n_nodes < 1:
            raise DimensionError("graph needs at least one node")
        seen = set()
        norm = []
        for a, b, w in self.edges:
            a, b, w = int(a), int(b), float(w)
            if a == b:
                raise ValueError(f"self-loop on node {a}")
            if not (0 <= a < self.n_nodes and 0 <= b < self.n_nodes):
                raise ValueError(f"edge ({a}, {b}) outside [0, {self.n_nodes})")
            if w < 0:
                raise ValueError(f"negative edge weight {w}")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise ValueError(f"duplicate undirected edge {key}")
            seen.add(key)
            norm.append((key[0], key[1], w))
        self.edges = sorted(norm)

    def adjacency(self) -> list[dict]:
        adj = [dict() for _ in range(self.n_nodes)]
        for a, b, w in self.edges:
            adj[a][b] = w
            adj[b][a] = w
        return adj


@dataclass
class ClusterAssignment:
    """Node -> cluster labels; ids are dense and ordered by descending size."""

    labels: np.ndarray
    n_clusters: int

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.labels.size == 0:
            raise DimensionError("labels must be a non-empty 1-D array")
        present = set(self.labels.tolist())
        if present != set(range(self.n_clusters)):
            raise ValueError("cluster ids must be exactly 0..n_clusters-1")

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster)


def build_knn_graph(features: np.ndarray, k: int) -> PatchGraph:
    """Symmetric kNN graph under cosine similarity.

    Each node keeps its k most similar distinct nodes (ties broken toward the
    lower node index); directed picks are united into undirected edges.
    Negative similarities clamp to weight 0. Zero-norm rows compare as 0
    against everything.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DimensionError("features must be (N >= 2, d)")
    n = x.shape[0]
    if not (1 <= k < n):
        raise ValueError(f"k must lie in [1, {n - 1}], got {k}")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    unit = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    sim = unit @ unit.T
    np.fill_diagonal(sim, -np.inf)  # exclude self-edges
    # stable argsort on -sim resolves equal similarities toward lower indices
    order = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    pairs = {}
    for i in range(n):
        for j in order[i]:
            j = int(j)
            key = (i, j) if i < j else (j, i)
            if key not in pairs:
                pairs[key] = max(0.0, float(sim[key[0], key[1]]))
    edges = [(a, b, w) for (a, b), w in sorted(pairs.items())]
    return PatchGraph(n, edges)


def modularity(graph: PatchGraph, labels: np.ndarray, resolution: float) -> float:
    """Quality of a partition: sum over clusters of in/m - r*(K_c/2m)^2.

    ``in`` counts each intra-cluster edge once, K_c is the total strength of
    the cluster's nodes, m the total edge weight. A graph with zero total
    weight scores 0 for every partition.
    """
    labels = np.asarray(labels)
    strength = np.zeros(graph.n_nodes)
    w_in = {}
    total = 0.0
    for a, b, w in graph.edges:
        strength[a] += w
        strength[b] += w
        total += w
        if labels[a] == labels[b]:
            w_in[labels[a]] = w_in.get(labels[a], 0.0) + w
    if total <= 0.0:
        return 0.0
    m2 = 2.0 * total
    q = 0.0
    for c in set(labels.tolist()):
        k_c = strength[labels == c].sum()
        q += w_in.get(c, 0.0) / total - resolution * (k_c / m2) ** 2
    return float(q)


def _local_move(adj, strength, m2, gamma, rng, init_labels):
    """One fast local-moving phase; returns (labels, any_move_made)."""
    n = len(adj)
    comm = list(init_labels)
    k_tot = {}
    for v in range(n):
        k_tot[comm[v]] = k_tot.get(comm[v], 0.0) + strength[v]
    next_id = max(comm) + 1 if comm else 0
    order = list(range(n))
    rng.shuffle(order)
    queue = deque(order)
    queued = [True] * n
    moved_any = False
    while queue:
        v = queue.popleft()
        queued[v] = False
        a = comm[v]
        k_v = strength[v]
        w_to = {}
        for u, w in adj[v].items():
            c = comm[u]
            w_to[c] = w_to.get(c, 0.0) + w
        w_va = w_to.get(a, 0.0)
        base = -w_va - gamma * k_v * (k_v - k_tot[a]) / m2  # move to empty comm
        best_gain, best_c = base, -1
        for c, w_vc in w_to.items():
            if c == a:
                continue
            gain = (w_vc - w_va) - gamma * k_v * (k_tot[c] - k_tot[a] + k_v) / m2
            if gain > best_gain + _GAIN_EPS:
                best_gain, best_c = gain, c
        if best_gain > _GAIN_EPS:
            target = best_c
            if target == -1:
                target = next_id
                next_id += 1
            k_tot[a] -= k_v
            k_tot[target] = k_tot.get(target, 0.0) + k_v
            comm[v] = target
            moved_any = True
            for u in adj[v]:
                if comm[u] != target and not queued[u]:
                    queue.append(u)
                    queued[u] = True
    return comm, moved_any


def _refine(adj, strength, m2, gamma, rng, labels):
    """Split each community into well-connected sub-communities.

    Starts from singletons; a node still alone may merge into a neighboring
    sub-community inside its own community when the quality gain is positive.
    """
    n = len(adj)
    sub = list(range(n))
    k_tot = list(strength)
    size = [1] * n
    order = list(range(n))
    rng.shuffle(order)
    for v in order:
        if size[sub[v]] > 1:
            continue  # only still-singleton nodes may move
        k_v = strength[v]
        w_to = {}
        for u, w in adj[v].items():
            if labels[u] != labels[v]:
                continue
            c = sub[u]
            if c != sub[v]:
                w_to[c] = w_to.get(c, 0.0) + w
        best_gain, best_c = _GAIN_EPS, None
        for c, w_vc in w_to.items():
            # from a singleton the leave term cancels: gain = links - C k_v K_c / m2
            gain = w_vc - gamma * k_v * k_tot[c] / m2
            if gain > best_gain:
                best_gain, best_c = gain, c
        if best_c is not None:
            old = sub[v]
            k_tot[best_c] += k_v
            k_tot[old] -= k_v
            size[best_c] += 1
            size[old] -= 1
            sub[v] = best_c
    return sub


def _leiden_once(adj0, strength0, m2, gamma, rng):
    """One full Leiden run on the flat graph; returns original-node labels."""
    n0 = len(adj0)
    node_of = list(range(n0))  # original node -> current-level node
    adj, strength = adj0, list(strength0)
    selfw = [0.0] * n0
    init = list(range(n0))
    while True:
        labels, _ = _local_move(adj, strength, m2, gamma, rng, init)
        n_level = len(adj)
        n_comms = len(set(labels))
        if n_comms == n_level:
            break
        sub = _refine(adj, strength, m2, gamma, rng, labels)
        # renumber refined communities deterministically by first occurrence
        remap, new_sub = {}, []
        for s in sub:
            if s not in remap:
                remap[s] = len(remap)
            new_sub.append(remap[s])
        n_new = len(remap)
        if n_new == n_level:
            break  # refinement kept all singletons: no aggregation progress
        # aggregate over refined communities
        new_adj = [dict() for _ in range(n_new)]
        new_selfw = [0.0] * n_new
        new_strength = [0.0] * n_new
        new_init = [0] * n_new
        for v in range(n_level):
            c = new_sub[v]
            new_strength[c] += strength[v]
            new_selfw[c] += selfw[v]
            new_init[c] = labels[v]  # all members share one community
        for v in range(n_level):
            cv = new_sub[v]
            for u, w in adj[v].items():
                if u <= v:
                    continue
                cu = new_sub[u]
                if cu == cv:
                    new_selfw[cv] += w
                else:
                    new_adj[cv][cu] = new_adj[cv].get(cu, 0.0) + w
                    new_adj[cu][cv] = new_adj[cu].get(cv, 0.0) + w
        node_of = [new_sub[x] for x in node_of]
        adj, selfw, strength, init = new_adj, new_selfw, new_strength, new_init
    final = labels
    return [final[x] for x in node_of]


def leiden_partition(
    graph: PatchGraph, resolution: float, seed: int, restarts: int = 8
) -> ClusterAssignment:
    """Partition a graph by seeded Leiden optimisation of the quality above.

    Runs ``restarts`` independent seeded optimisations and keeps the best
    partition. Cluster ids are renumbered by descending size, ties by the
    smallest member index, so output is reproducible for a fixed seed.
    """
    if resolution <= 0:
        raise ValueError("resolution must be > 0")
    n = graph.n_nodes
    adj = graph.adjacency()
    strength = [sum(nbrs.values()) for nbrs in adj]
    m2 = sum(strength)
    if m2 <= 0.0:
        return _renumber(np.arange(n), n)
    # tiny graphs are cheap to re-run, so search harder there
    runs = max(restarts, 16) if n <= 32 else restarts
    master = random.Random(seed)
    best_labels, best_q = None, -np.inf
    for _ in range(runs):
        rng = random.Random(master.getrandbits(64))
        labels = _leiden_once(adj, strength, m2, resolution, rng)
        q = modularity(graph, np.asarray(labels), resolution)
        if q > best_q + 1e-15:
            best_q, best_labels = q, labels
    return _renumber(np.asarray(best_labels), n)


def _renumber(labels: np.ndarray, n: int) -> ClusterAssignment:
    labels = np.asarray(labels)
    stats = {}
    for idx, c in enumerate(labels.tolist()):
        size, first = stats.get(c, (0, idx))
        stats[c] = (size + 1, min(first, idx))
    order = sorted(stats, key=lambda c: (-stats[c][0], stats[c][1]))
    remap = {c: i for i, c in enumerate(order)}
    out = np.array([remap[c] for c in labels.tolist()], dtype=np.int64)
    return ClusterAssignment(out, len(order))


def clusters_to_masks(
    assignment: ClusterAssignment, height: int, width: int
) -> list[SoftPatchMask]:
    """One binary soft mask per cluster, on the (height, width) patch grid."""
    if assignment.labels.size != height * width:
        raise DimensionError(
            f"{assignment.labels.size} labels cannot fill a {height}x{width} grid"
        )
    grid = assignment.labels.reshape(height, width)
    return [
        SoftPatchMask(height, width, (grid == c).astype(np.float64))
        for c in range(assignment.n_clusters)
    ]
