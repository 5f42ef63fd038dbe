"""kNN graph construction and Leiden partition quality/determinism."""
import numpy as np
import pytest

from dss.clustering import (
    ClusterAssignment,
    PatchGraph,
    build_knn_graph,
    clusters_to_masks,
    leiden_partition,
    modularity,
)

from oracles import exact_best_partition, random_graph


def _partition_sets(labels):
    groups = {}
    for node, c in enumerate(labels):
        groups.setdefault(int(c), set()).add(node)
    return frozenset(frozenset(g) for g in groups.values())


# ===== graph type =====

def test_graph_rejects_self_loops_duplicates_negatives():
    with pytest.raises(ValueError):
        PatchGraph(3, [(0, 0, 1.0)])
    with pytest.raises(ValueError):
        PatchGraph(3, [(0, 1, 1.0), (1, 0, 0.5)])
    with pytest.raises(ValueError):
        PatchGraph(3, [(0, 1, -0.1)])
    with pytest.raises(ValueError):
        PatchGraph(3, [(0, 3, 1.0)])


def test_cluster_assignment_requires_dense_ids():
    with pytest.raises(ValueError):
        ClusterAssignment(np.array([0, 2]), 3)


# ===== knn graph =====

def test_knn_identical_vectors_tie_break_to_lower_index():
    x = np.tile([1.0, 2.0], (3, 1))
    g = build_knn_graph(x, k=1)
    # every node picks the lowest-index other node: 0->1, 1->0, 2->0
    assert set((a, b) for a, b, _ in g.edges) == {(0, 1), (0, 2)}
    assert all(w == pytest.approx(1.0) for _, _, w in g.edges)


def test_knn_orthogonal_groups_have_no_cross_edges():
    rng = np.random.default_rng(0)
    a = np.zeros((6, 4))
    a[:, 0] = rng.uniform(1, 2, size=6)
    b = np.zeros((5, 4))
    b[:, 1] = rng.uniform(1, 2, size=5)
    x = np.vstack([a, b])
    g = build_knn_graph(x, k=3)
    for i, j, w in g.edges:
        same_group = (i < 6) == (j < 6)
        if not same_group:
            assert w == 0.0
        else:
            assert w == pytest.approx(1.0)


def test_knn_k_bounds():
    x = np.eye(4)
    with pytest.raises(ValueError):
        build_knn_graph(x, k=4)
    with pytest.raises(ValueError):
        build_knn_graph(x, k=0)


def test_knn_negative_similarity_clamped_to_zero():
    x = np.array([[1.0, 0.0], [-1.0, 0.0]])
    g = build_knn_graph(x, k=1)
    assert g.edges == [(0, 1, 0.0)]


def test_knn_zero_norm_row_compares_as_zero():
    x = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 0.1]])
    g = build_knn_graph(x, k=1)
    weights = {(a, b): w for a, b, w in g.edges}
    assert weights[(1, 2)] > 0.99
    # the zero row picked node 1 by the index tie-break, at weight 0
    assert weights[(0, 1)] == 0.0


# ===== leiden =====

def _clique_pair_graph():
    edges = []
    for base in (0, 4):
        for i in range(4):
            for j in range(i + 1, 4):
                edges.append((base + i, base + j, 1.0))
    edges.append((0, 4, 1.0))  # single bridge
    return PatchGraph(8, edges)


def test_leiden_two_cliques_split_matches_exact_optimum():
    g = _clique_pair_graph()
    got = leiden_partition(g, resolution=0.5, seed=0)
    assert got.n_clusters == 2
    assert _partition_sets(got.labels) == frozenset(
        {frozenset({0, 1, 2, 3}), frozenset({4, 5, 6, 7})}
    )
    _, best_q = exact_best_partition(g, 0.5)
    assert modularity(g, got.labels, 0.5) == pytest.approx(best_q, abs=1e-12)


def test_leiden_complete_graph_is_one_cluster():
    edges = [(i, j, 1.0) for i in range(6) for j in range(i + 1, 6)]
    g = PatchGraph(6, edges)
    got = leiden_partition(g, resolution=0.5, seed=0)
    assert got.n_clusters == 1
    _, best_q = exact_best_partition(g, 0.5)
    assert modularity(g, got.labels, 0.5) == pytest.approx(best_q, abs=1e-12)


def test_leiden_zero_edges_gives_singletons():
    g = PatchGraph(5, [])
    got = leiden_partition(g, resolution=0.5, seed=0)
    assert got.n_clusters == 5
    assert got.labels.tolist() == [0, 1, 2, 3, 4]


def test_leiden_matches_exact_optimum_on_random_graphs():
    rng = np.random.default_rng(1234)
    resolutions = [0.5, 0.8, 1.0, 1.5]
    for trial in range(50):
        n = int(rng.integers(4, 11))
        g = random_graph(rng, n)
        res = resolutions[trial % len(resolutions)]
        got = leiden_partition(g, resolution=res, seed=trial)
        _, best_q = exact_best_partition(g, res)
        q = modularity(g, got.labels, res)
        assert q == pytest.approx(best_q, abs=1e-9), f"trial {trial}, n={n}"


def test_leiden_quality_at_least_singletons():
    rng = np.random.default_rng(99)
    for trial in range(20):
        n = int(rng.integers(4, 12))
        g = random_graph(rng, n, edge_prob=0.6)
        got = leiden_partition(g, resolution=0.7, seed=trial)
        q = modularity(g, got.labels, 0.7)
        q_singletons = modularity(g, np.arange(n), 0.7)
        assert q >= q_singletons - 1e-12


def test_leiden_node_permutation_gives_same_partition():
    rng = np.random.default_rng(7)
    for trial in range(10):
        n = 8
        g = random_graph(rng, n, edge_prob=0.6)
        perm = rng.permutation(n)
        g2 = PatchGraph(n, [(perm[a], perm[b], w) for a, b, w in g.edges])
        got1 = leiden_partition(g, resolution=0.8, seed=5)
        got2 = leiden_partition(g2, resolution=0.8, seed=5)
        mapped = frozenset(
            frozenset(int(perm[v]) for v in block)
            for block in _partition_sets(got1.labels)
        )
        assert mapped == _partition_sets(got2.labels)


def test_leiden_same_seed_reproducible():
    rng = np.random.default_rng(21)
    g = random_graph(rng, 10, edge_prob=0.5)
    a = leiden_partition(g, resolution=0.5, seed=42)
    b = leiden_partition(g, resolution=0.5, seed=42)
    assert np.array_equal(a.labels, b.labels)


def test_leiden_cluster_ids_ordered_by_descending_size():
    # 5-clique and a 3-clique, no bridge: big clique must be cluster 0
    edges = [(i, j, 1.0) for i in range(5) for j in range(i + 1, 5)]
    edges += [(i, j, 1.0) for i in range(5, 8) for j in range(i + 1, 8)]
    g = PatchGraph(8, edges)
    got = leiden_partition(g, resolution=1.0, seed=0)
    assert got.n_clusters == 2
    assert set(got.labels[:5].tolist()) == {0}
    assert set(got.labels[5:].tolist()) == {1}


# ===== masks from clusters =====

def test_clusters_to_masks_partition_grid():
    labels = np.array([0, 0, 1, 2, 1, 0])
    asg = ClusterAssignment(labels, 3)
    masks = clusters_to_masks(asg, 2, 3)
    assert len(masks) == 3
    total = sum(m.probs for m in masks)
    assert np.array_equal(total, np.ones((2, 3)))
    assert np.array_equal(masks[0].probs.reshape(-1), (labels == 0).astype(float))


def test_clusters_to_masks_size_mismatch():
    asg = ClusterAssignment(np.array([0, 1]), 2)
    with pytest.raises(Exception):
        clusters_to_masks(asg, 2, 3)
