"""Tests for random walks, skip-gram with negative sampling, node2vec
pooling, and graph2vec documents: finite-difference oracles, Monte-Carlo
checks of the walk bias, and determinism contracts."""
import numpy as np
import pytest
from scipy.special import expit

from genograph.sequence_io import HOST, Read
from genograph.debruijn import DeBruijnGraph, GraphSet, build_graph_set, read_to_graph
from genograph.embed import (
    EmbeddingConfig,
    GraphEmbedding,
    Graph2VecEmbedder,
    NegativeSampler,
    Node2VecEmbedder,
    SkipGramModel,
    Walk,
    biased_walks,
    graph2vec_embedding,
    node2vec_graph_embedding,
    read_embedding,
    sgns_batch_loss_grad,
    skipgram_train,
    walks_to_pairs,
    wl_relabel_corpus,
    write_embedding,
)


def toy(nodes, edges, k=2, gid="g"):
    return DeBruijnGraph(nodes=list(nodes), edges={e: 1 for e in edges},
                         label=HOST, k=k, id=gid)


# ---------------------------------------------------------------------------
# Random walks
# ---------------------------------------------------------------------------

def test_walks_per_node_and_validity():
    g = read_to_graph(Read("r", "ACGTACGTTG"), 3)
    cfg = EmbeddingConfig(walks_per_node=3, walk_length=8)
    walks = biased_walks(g, cfg, seed=1)
    assert len(walks) == 3 * g.num_nodes()
    adj = g.undirected_adjacency()
    loops = {u for (u, v) in g.edges if u == v}
    for w in walks:
        assert 1 <= len(w.nodes) <= cfg.walk_length
        for a, b in zip(w.nodes, w.nodes[1:]):
            assert b in adj[a] or (a == b and a in loops)


def test_isolated_node_walk_length_one():
    g = toy(["A"], [])
    walks = biased_walks(g, EmbeddingConfig(walks_per_node=2, walk_length=5), seed=0)
    assert [w.nodes for w in walks] == [["A"], ["A"]]


def test_walks_deterministic_under_seed():
    g = read_to_graph(Read("r", "ACGTACGTTGCA"), 3)
    cfg = EmbeddingConfig(walks_per_node=2, walk_length=6, p=2.0, q=0.5)
    w1 = biased_walks(g, cfg, seed=9)
    w2 = biased_walks(g, cfg, seed=9)
    assert [w.nodes for w in w1] == [w.nodes for w in w2]


def test_biased_walk_transition_frequencies_match_analytic():
    # Star-with-triangle graph: walking A -> B, the next step weights are
    # 1/p back to A, 1 to C (also adjacent to A), 1/q to D (distance 2).
    edges = [("A", "B"), ("B", "A"), ("B", "C"), ("B", "D"), ("A", "C")]
    g = toy(["A", "B", "C", "D"], edges)
    p_ret, q_out = 4.0, 0.25
    cfg = EmbeddingConfig(walks_per_node=4000, walk_length=3, p=p_ret, q=q_out)
    walks = biased_walks(g, cfg, seed=13)
    counts = {"A": 0, "C": 0, "D": 0}
    for w in walks:
        if len(w.nodes) == 3 and w.nodes[0] == "A" and w.nodes[1] == "B":
            counts[w.nodes[2]] += 1
    total = sum(counts.values())
    assert total > 500
    weights = np.array([1.0 / p_ret, 1.0, 1.0 / q_out])
    expected = weights / weights.sum()
    observed = np.array([counts["A"], counts["C"], counts["D"]]) / total
    assert np.allclose(observed, expected, atol=0.03)


# ---------------------------------------------------------------------------
# Skip-gram with negative sampling
# ---------------------------------------------------------------------------

def _full_sgns_gradients(w_in, w_out, centers, contexts, negatives):
    loss, grad_c, grad_t, targets = sgns_batch_loss_grad(
        w_in, w_out, centers, contexts, negatives
    )
    g_in = np.zeros_like(w_in)
    np.add.at(g_in, centers, grad_c)
    g_out = np.zeros_like(w_out)
    np.add.at(g_out, targets.ravel(), grad_t.reshape(-1, w_out.shape[1]))
    return loss, g_in, g_out


def _fd_check_sgns(centers, contexts, negatives, v=10, d=4, tol=1e-4, seed=0):
    rng = np.random.default_rng(seed)
    w_in = rng.normal(size=(v, d))
    w_out = rng.normal(size=(v, d))
    _, g_in, g_out = _full_sgns_gradients(w_in, w_out, centers, contexts, negatives)
    eps = 1e-6
    worst = 0.0
    for W, G in ((w_in, g_in), (w_out, g_out)):
        for i in range(v):
            for j in range(d):
                W[i, j] += eps
                lp, *_ = sgns_batch_loss_grad(w_in, w_out, centers, contexts, negatives)
                W[i, j] -= 2 * eps
                lm, *_ = sgns_batch_loss_grad(w_in, w_out, centers, contexts, negatives)
                W[i, j] += eps
                fd = (lp - lm) / (2 * eps)
                denom = max(abs(fd), abs(G[i, j]), 1e-8)
                worst = max(worst, abs(fd - G[i, j]) / denom)
    assert worst < tol, worst


def test_sgns_gradient_single_pair_no_negatives():
    # loss reduces to -log sigma(u . v); gradient vs finite differences
    _fd_check_sgns(
        np.array([2]), np.array([7]), np.empty((1, 0), dtype=np.int64), tol=1e-5
    )


def test_sgns_gradient_batch_with_negatives():
    rng = np.random.default_rng(3)
    centers = rng.integers(0, 10, size=6)
    contexts = rng.integers(0, 10, size=6)
    negatives = rng.integers(0, 10, size=(6, 3))
    _fd_check_sgns(centers, contexts, negatives, tol=1e-4, seed=4)


def test_sgns_cooccurring_pair_score_rises_with_epochs():
    # With only the positive pair in play the logit climbs toward sigma = 1;
    # with negatives the score settles at the corpus' stationary ratio, so
    # the asymptotic claim is tested in the no-negatives limit.
    vocab = {"u": 0, "v": 1}
    walks = [Walk(["u", "v"], "g") for _ in range(50)]

    def score(epochs):
        cfg = EmbeddingConfig(dim=8, window=10, epochs=epochs, negative_samples=0,
                              lr=0.2, seed=2, batch_size=16)
        model = SkipGramModel(len(vocab), cfg)
        centers, contexts = walks_to_pairs(walks, vocab, cfg.window)
        model.train_pairs(centers, contexts)
        return expit(float(model.w_in[0] @ model.w_out[1]))

    s10, s100 = score(10), score(100)
    assert s100 > s10 > 0.5
    assert s100 > 0.9


def test_sgns_epoch_loss_non_increasing():
    rng = np.random.default_rng(5)
    vocab = {f"t{i}": i for i in range(12)}
    walks = [
        Walk([f"t{j}" for j in rng.integers(0, 12, size=8)], "g") for _ in range(40)
    ]
    cfg = EmbeddingConfig(dim=8, window=3, epochs=6, lr=0.05, seed=6, batch_size=64)
    model = SkipGramModel(len(vocab), cfg)
    centers, contexts = walks_to_pairs(walks, vocab, cfg.window)
    losses = model.train_pairs(centers, contexts)
    assert len(losses) == 6
    for a, b in zip(losses, losses[1:]):
        assert b <= a + 1e-3


def test_sgns_deterministic():
    vocab = {"a": 0, "b": 1, "c": 2}
    walks = [Walk(["a", "b", "c"], "g")] * 10
    cfg = EmbeddingConfig(dim=4, epochs=3, seed=11)
    v1 = skipgram_train(walks, vocab, cfg)
    v2 = skipgram_train(walks, vocab, cfg)
    assert np.array_equal(v1, v2)


def test_sgns_empty_vocabulary():
    with pytest.raises(ValueError):
        SkipGramModel(0, EmbeddingConfig())


def test_walks_to_pairs_window():
    vocab = {"a": 0, "b": 1, "c": 2}
    pairs = walks_to_pairs([Walk(["a", "b", "c"], "g")], vocab, window=1)
    got = set(zip(pairs[0].tolist(), pairs[1].tolist()))
    assert got == {(0, 1), (1, 0), (1, 2), (2, 1)}


def test_negative_sampler_matches_distribution():
    probs = np.array([0.5, 0.25, 0.125, 0.125])
    sampler = NegativeSampler(probs)
    draws = sampler.sample((20000, 2), np.random.default_rng(1)).ravel()
    freq = np.bincount(draws, minlength=4) / draws.shape[0]
    assert np.allclose(freq, probs, atol=0.02)


# ---------------------------------------------------------------------------
# node2vec graph embedding
# ---------------------------------------------------------------------------

def _toy_graph_set():
    reads = [
        Read("a", "ACGTACGT", label=HOST),
        Read("b", "TTGCATTG", label=HOST),
        Read("c", "ACGTACGT", label=HOST),
    ]
    return build_graph_set(reads, 3)


def test_node2vec_output_shape_and_finite():
    gs = _toy_graph_set()
    cfg = EmbeddingConfig(dim=16, walks_per_node=2, walk_length=5, epochs=1, seed=1)
    emb = node2vec_graph_embedding(gs, cfg)
    assert emb.vectors.shape == (3, 16)
    assert np.isfinite(emb.vectors).all()


def test_node2vec_identical_reads_identical_rows():
    gs = _toy_graph_set()
    cfg = EmbeddingConfig(dim=16, walks_per_node=2, walk_length=5, epochs=1, seed=1)
    emb = node2vec_graph_embedding(gs, cfg)
    assert np.array_equal(emb.vectors[0], emb.vectors[2])


def test_node2vec_single_node_graph_row_is_node_vector():
    g1 = toy(["AA"], [], gid="s")
    g2 = read_to_graph(Read("b", "ACGTAC"), 2)
    gs = build_graph_set([Read("b", "ACGTAC")], 2)
    vocab = dict(gs.vocabulary)
    vocab.setdefault("AA", len(vocab))
    gs_all = GraphSet([g1, g2], 2, vocab)
    cfg = EmbeddingConfig(dim=8, walks_per_node=1, walk_length=4, epochs=1, seed=3)
    embedder = Node2VecEmbedder(cfg).fit(gs_all)
    rows = embedder.transform([g1])
    assert np.allclose(rows[0], embedder.node_vectors_[vocab["AA"]])


def test_node2vec_transform_unfitted():
    with pytest.raises(RuntimeError):
        Node2VecEmbedder().transform([])


def test_node2vec_transform_unseen_graph_uses_global_vocabulary():
    gs = _toy_graph_set()
    cfg = EmbeddingConfig(dim=8, walks_per_node=1, walk_length=4, epochs=1, seed=3)
    embedder = Node2VecEmbedder(cfg).fit(gs.subset([0, 1]))
    rows = embedder.transform([gs.graphs[2]])
    assert np.isfinite(rows).all() and rows.shape == (1, 8)


# ---------------------------------------------------------------------------
# graph2vec documents and embedding
# ---------------------------------------------------------------------------

def test_wl_corpus_height_zero_is_raw_labels():
    gs = _toy_graph_set()
    docs, relabeler = wl_relabel_corpus(gs, height=0)
    for doc, g in zip(docs, gs.graphs):
        assert len(doc) == g.num_nodes()
    # raw ids are shared across graphs: identical reads → identical documents
    assert docs[0] == docs[2]


def test_wl_corpus_two_node_path_height_one_has_four_tokens():
    g = toy(["A", "B"], [("A", "B")])
    docs, _ = wl_relabel_corpus(GraphSet([g], 2, {}), height=1)
    assert len(docs[0]) == 4
    # raw labels A, B plus two distinct refined labels
    assert len(set(docs[0])) == 4


def test_graph2vec_shape_and_determinism():
    gs = _toy_graph_set()
    cfg = EmbeddingConfig(dim=16, epochs=2, wl_height=2, seed=5)
    e1 = graph2vec_embedding(gs, cfg)
    e2 = graph2vec_embedding(gs, cfg)
    assert e1.vectors.shape == (3, 16)
    assert np.array_equal(e1.vectors, e2.vectors)


def test_graph2vec_zero_epochs_equals_init():
    gs = _toy_graph_set()
    cfg = EmbeddingConfig(dim=8, epochs=0, wl_height=1, seed=7)
    vec = graph2vec_embedding(gs, cfg).vectors
    rng = np.random.default_rng([7, 303])
    init = (rng.random((3, 8)) - 0.5) / 8
    assert np.array_equal(vec, init)


def test_graph2vec_identical_documents_rank_higher():
    reads = [
        Read("a", "ACGTACGTAC", label=HOST),
        Read("b", "ACGTACGTAC", label=HOST),
        Read("c", "TTTTTTTTTT", label=HOST),
    ]
    gs = build_graph_set(reads, 3)
    cfg = EmbeddingConfig(dim=16, epochs=300, wl_height=2, lr=0.2, seed=9,
                          negative_samples=3, batch_size=16)
    vec = graph2vec_embedding(gs, cfg).vectors

    def cos(u, v):
        return float(u @ v / (np.linalg.norm(u) * np.linalg.norm(v) + 1e-12))

    assert cos(vec[0], vec[1]) > cos(vec[0], vec[2])


def test_graph2vec_transform_skips_unknown_tokens():
    gs = _toy_graph_set()
    cfg = EmbeddingConfig(dim=8, epochs=2, wl_height=1, seed=11)
    embedder = Graph2VecEmbedder(cfg).fit(gs.subset([0]))
    rows = embedder.transform([gs.graphs[1]])
    assert rows.shape == (1, 8) and np.isfinite(rows).all()


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def test_embedding_round_trip(tmp_path):
    gs = _toy_graph_set()
    cfg = EmbeddingConfig(dim=8, walks_per_node=1, walk_length=4, epochs=1, seed=1)
    emb = node2vec_graph_embedding(gs, cfg)
    p = tmp_path / "n2v.emb"
    write_embedding(emb, p)
    back = read_embedding(p)
    assert np.array_equal(back.vectors, emb.vectors)
    assert back.method == "node2vec" and back.cfg == cfg
