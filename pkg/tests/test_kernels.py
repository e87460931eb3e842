"""Tests for the four graph kernels: hand-derived values, PSD/symmetry
properties, fixed-point oracles, and the fold-feature transformer."""
import numpy as np
import pytest

from genograph.sequence_io import HOST, Read
from genograph.debruijn import DeBruijnGraph, GraphSet, build_graph_set, read_to_graph
from genograph.kernels import (
    GraphKernelTransformer,
    KernelConfig,
    ProductTooLarge,
    graphlet_histogram,
    graphlet_kernel,
    kernel_matrix,
    random_walk_kernel,
    read_kernel_matrix,
    shortest_path_kernel,
    sp_feature_map,
    wl_feature_map,
    wl_kernel,
    write_kernel_matrix,
    WlRelabeler,
    write_kernel_matrix,
)


def toy(nodes, edges, k=2):
    return DeBruijnGraph(nodes=list(nodes), edges={e: 1 for e in edges}, label=HOST, k=k)


def random_graph_set(n_graphs, length=30, k=3, seed=0):
    rng = np.random.default_rng(seed)
    reads = [
        Read(f"r{i}", "".join(rng.choice(list("ACGT"), size=length)), label=HOST)
        for i in range(n_graphs)
    ]
    return build_graph_set(reads, k)


# ---------------------------------------------------------------------------
# Shortest-path kernel
# ---------------------------------------------------------------------------

def test_spk_self_similarity_positive():
    g = toy(["A", "B"], [("A", "B")])
    assert shortest_path_kernel(g, g) > 0


def test_spk_disjoint_labels_zero():
    g1 = toy(["A", "B"], [("A", "B")])
    g2 = toy(["C", "D"], [("C", "D")])
    assert shortest_path_kernel(g1, g2) == 0.0


def test_spk_path_abc_vs_ab_is_one():
    # A−B−C features: (A,B,1), (B,C,1), (A,C,2); A−B features: (A,B,1).
    # The only shared feature is (A,B,1) with count 1 in both → dot = 1.
    abc = toy(["A", "B", "C"], [("A", "B"), ("B", "C")])
    ab = toy(["A", "B"], [("A", "B")])
    assert shortest_path_kernel(abc, ab) == 1.0


def test_spk_feature_map_hand_check():
    abc = toy(["A", "B", "C"], [("A", "B"), ("B", "C")])
    assert dict(sp_feature_map(abc)) == {
        ("A", "B", 1): 1,
        ("B", "C", 1): 1,
        ("A", "C", 2): 1,
    }


def test_spk_max_length_cap():
    abc = toy(["A", "B", "C"], [("A", "B"), ("B", "C")])
    feats = sp_feature_map(abc, max_len=1)
    assert ("A", "C", 2) not in feats


# ---------------------------------------------------------------------------
# Weisfeiler-Lehman kernel
# ---------------------------------------------------------------------------

def test_wlk_isomorphic_graphs_normalized_one():
    g1 = read_to_graph(Read("a", "ACGTAC"), 3)
    g2 = read_to_graph(Read("b", "ACGTAC"), 3)
    km = kernel_matrix(GraphSet([g1, g2], 3, {}), "wlk")
    assert km.values[0, 1] == pytest.approx(1.0)


def test_wlk_zero_iterations_is_label_histogram_dot():
    g1 = toy(["A", "B"], [("A", "B")])
    g2 = toy(["A", "C"], [("A", "C")])
    # raw histograms {A:1,B:1} vs {A:1,C:1} overlap only on A → 1
    assert wl_kernel(g1, g2, iterations=0) == 1.0


def test_wlk_refinement_monotone():
    # graphs distinguished at h-1 stay distinguished at h
    gs = random_graph_set(12, length=25, k=3, seed=4)
    for i in range(len(gs.graphs)):
        for j in range(i + 1, len(gs.graphs)):
            prev_distinct = False
            for h in range(4):
                rel = WlRelabeler()
                fa = wl_feature_map(gs.graphs[i], h, rel)
                fb = wl_feature_map(gs.graphs[j], h, rel)
                distinct = fa != fb
                if prev_distinct:
                    assert distinct
                prev_distinct = distinct


# ---------------------------------------------------------------------------
# Graphlet kernel
# ---------------------------------------------------------------------------

def test_gsk_identical_graphs_same_seed_normalized_one():
    g1 = read_to_graph(Read("a", "ACGTACGTTG"), 3)
    g2 = read_to_graph(Read("b", "ACGTACGTTG"), 3)
    km = kernel_matrix(GraphSet([g1, g2], 3, {}), "gsk", seed=3)
    assert km.values[0, 1] == pytest.approx(1.0)


def test_gsk_too_small_graph_zero():
    small = toy(["A", "B"], [("A", "B")])
    big = read_to_graph(Read("a", "ACGTACGTTG"), 3)
    assert graphlet_kernel(small, big) == 0.0


def test_gsk_k5_triangles():
    nodes = ["A", "B", "C", "D", "E"]
    edges = [(u, v) for i, u in enumerate(nodes) for v in nodes[i + 1 :]]
    k5a = toy(nodes, edges)
    k5b = toy(nodes, edges)
    cfg = KernelConfig(graphlet_size=3, graphlet_samples=50)
    # every 3-subset of K5 induces a triangle → both histograms are a point
    # mass on the triangle class → dot product 1
    assert graphlet_kernel(k5a, k5b, cfg, seed=1) == pytest.approx(1.0)


def test_gsk_histogram_sums_to_one():
    gs = random_graph_set(10, length=30, k=3, seed=7)
    cfg = KernelConfig()
    rng = np.random.default_rng(0)
    for g in gs.graphs:
        hist = graphlet_histogram(g, cfg, rng)
        if hist is not None:
            assert abs(sum(hist.values()) - 1.0) < 1e-12


# ---------------------------------------------------------------------------
# Random-walk kernel
# ---------------------------------------------------------------------------

def test_rwk_tiny_lambda_counts_matching_pairs():
    g1 = read_to_graph(Read("a", "ACGTAC"), 3)
    g2 = read_to_graph(Read("b", "CGTACG"), 3)
    shared = len(set(g1.nodes) & set(g2.nodes))
    cfg = KernelConfig(rw_lambda=1e-12)
    assert random_walk_kernel(g1, g2, cfg) == pytest.approx(shared, abs=1e-6)


def test_rwk_disjoint_labels_zero():
    g1 = toy(["A", "B"], [("A", "B")])
    g2 = toy(["C", "D"], [("C", "D")])
    assert random_walk_kernel(g1, g2) == 0.0


def test_rwk_single_edge_closed_form():
    # product graph of A−B with itself is the 2-node path; W = [[0,1],[1,0]],
    # so x = (I−λW)^−1·1 has sum 2/(1−λ).
    g = toy(["A", "B"], [("A", "B")])
    lam = 0.1
    cfg = KernelConfig(rw_lambda=lam, rw_tol=1e-14, rw_max_iter=10_000)
    assert random_walk_kernel(g, g, cfg) == pytest.approx(2.0 / (1.0 - lam), abs=1e-8)


def test_rwk_fixed_point_matches_dense_solve():
    gs = random_graph_set(8, length=40, k=3, seed=9)
    cfg = KernelConfig(rw_tol=1e-12, rw_max_iter=10_000)
    from genograph.kernels import _product_graph, _rw_lambda

    checked = 0
    for i in range(len(gs.graphs)):
        for j in range(i, len(gs.graphs)):
            a, b = gs.graphs[i], gs.graphs[j]
            _, W = _product_graph(a, b, cfg.rw_product_cap)
            n = W.shape[0]
            if n == 0 or n > 100:
                continue
            lam = _rw_lambda(a, b, cfg)
            dense = np.linalg.solve(np.eye(n) - lam * W.toarray(), np.ones(n)).sum()
            assert random_walk_kernel(a, b, cfg) == pytest.approx(dense, abs=1e-6)
            checked += 1
    assert checked > 0


def test_rwk_product_too_large_structured():
    gs = random_graph_set(2, length=60, k=3, seed=2)
    cfg = KernelConfig(rw_product_cap=1)
    with pytest.raises(ProductTooLarge) as exc:
        random_walk_kernel(gs.graphs[0], gs.graphs[1], cfg)
    rep = exc.value.report()
    assert rep["error"] == "ProductTooLarge"
    assert rep["size"] > rep["cap"] == 1


# ---------------------------------------------------------------------------
# Matrix-level properties
# ---------------------------------------------------------------------------

def test_matrix_single_graph_normalized():
    gs = random_graph_set(1, seed=5)
    km = kernel_matrix(gs, "wlk")
    assert km.values.tolist() == [[1.0]]


@pytest.mark.parametrize("kind", ["spk", "wlk", "gsk", "rwk"])
def test_matrix_bitwise_symmetric(kind):
    gs = random_graph_set(8, length=25, k=3, seed=11)
    km = kernel_matrix(gs, kind, seed=1)
    assert np.array_equal(km.values, km.values.T)


@pytest.mark.parametrize("kind", ["spk", "wlk"])
def test_matrix_psd(kind):
    gs = random_graph_set(15, length=30, k=3, seed=13)
    for normalized in (False, True):
        km = kernel_matrix(gs, kind, normalized=normalized)
        eig = np.linalg.eigvalsh(km.values)
        assert eig.min() >= -1e-8


def test_matrix_normalized_diag_is_one():
    gs = random_graph_set(6, seed=15)
    for kind in ("spk", "wlk", "gsk"):
        km = kernel_matrix(gs, kind)
        assert np.all(np.diag(km.values) == 1.0)


def test_matrix_unknown_kind():
    gs = random_graph_set(2, seed=17)
    with pytest.raises(ValueError):
        kernel_matrix(gs, "cosine")


# ---------------------------------------------------------------------------
# Fold-feature transformer (leakage-free kernel rows)
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kind", ["spk", "wlk", "gsk"])
def test_transformer_rows_match_full_matrix_slices(kind):
    gs = random_graph_set(10, length=25, k=3, seed=19)
    train, test = list(range(7)), list(range(7, 10))
    km = kernel_matrix(gs, kind, seed=5)
    tr = GraphKernelTransformer(kind=kind, seed=5).fit(gs.subset(train).graphs)
    got = tr.transform(gs.subset(test).graphs)
    want = km.values[np.ix_(test, train)]
    # identical because per-graph sampling/labeling depends only on content
    assert np.allclose(got, want, atol=1e-12)


def test_transformer_train_rows_are_gram_rows():
    gs = random_graph_set(6, length=25, k=3, seed=21)
    tr = GraphKernelTransformer(kind="wlk").fit(gs.graphs)
    rows = tr.transform(gs.graphs)
    km = kernel_matrix(gs, "wlk")
    assert np.allclose(rows, km.values, atol=1e-12)


def test_transformer_unfitted():
    with pytest.raises(RuntimeError):
        GraphKernelTransformer().transform([])


def test_transformer_unseen_features_do_not_grow_index():
    gs = random_graph_set(5, length=25, k=3, seed=23)
    tr = GraphKernelTransformer(kind="wlk").fit(gs.graphs[:3])
    n_features = len(tr.feature_index_)
    tr.transform(gs.graphs[3:])
    assert len(tr.feature_index_) == n_features


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def test_kernel_matrix_round_trip(tmp_path):
    gs = random_graph_set(5, seed=25)
    km = kernel_matrix(gs, "spk")
    p = tmp_path / "m.kmat"
    write_kernel_matrix(km, p, seed=3)
    back, header = read_kernel_matrix(p)
    assert np.array_equal(back.values, km.values)
    assert back.kernel_kind == "spk" and back.normalized
    assert header["M"] == 5 and header["seed"] == 3
