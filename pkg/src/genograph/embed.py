"""Unsupervised graph representations: node2vec with mean-pooled node
vectors, and a PV-DBOW document model over Weisfeiler-Lehman subtree labels
(graph2vec style).

One skip-gram model is shared across all graphs: k-mer identity ties the
vocabulary together, which is what makes mean-pooled graph vectors
comparable between graphs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, asdict, replace
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.special import expit
from sklearn.base import BaseEstimator, TransformerMixin

from .debruijn import DeBruijnGraph, GraphSet
from .kernels import WlRelabeler

_EPS = 1e-12


@dataclass(frozen=True)
class EmbeddingConfig:
    dim: int = 128
    walks_per_node: int = 10
    walk_length: int = 80
    window: int = 10
    p: float = 1.0
    q: float = 1.0
    negative_samples: int = 5
    epochs: int = 5
    lr: float = 0.025
    wl_height: int = 3
    batch_size: int = 2048
    seed: int = 0

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError("dim must be positive")
        if self.p <= 0 or self.q <= 0:
            raise ValueError("p and q must be positive")


@dataclass
class Walk:
    nodes: List[str]
    graph_id: str


@dataclass
class GraphEmbedding:
    vectors: np.ndarray
    method: str
    cfg: EmbeddingConfig


# ---------------------------------------------------------------------------
# Random walks
# ---------------------------------------------------------------------------

def _walk_adjacency(g: DeBruijnGraph) -> Dict[str, List[str]]:
    """Directed out-neighbors; sinks fall back to undirected neighbors so
    walks from linear reads do not truncate immediately."""
    out = g.out_adjacency()
    und = g.undirected_adjacency()
    return {u: (out[u] if out[u] else und[u]) for u in g.nodes}


def biased_walks(g: DeBruijnGraph, cfg: EmbeddingConfig, seed: int) -> List[Walk]:
    """walks_per_node walks from every node with node2vec's second-order
    p/q bias. Deterministic under seed."""
    rng = np.random.default_rng(seed)
    if cfg.p == 1.0 and cfg.q == 1.0:
        return _uniform_walks(g, cfg, rng)
    adj = _walk_adjacency(g)
    und = g.undirected_adjacency()
    und_sets = {u: set(v) for u, v in und.items()}
    walks = []
    for _ in range(cfg.walks_per_node):
        for start in g.nodes:
            walk = [start]
            while len(walk) < cfg.walk_length:
                cur = walk[-1]
                nbrs = adj[cur]
                if not nbrs:
                    break
                if len(walk) == 1:
                    walk.append(nbrs[int(rng.integers(len(nbrs)))])
                    continue
                prev = walk[-2]
                weights = np.empty(len(nbrs))
                for i, x in enumerate(nbrs):
                    if x == prev:
                        weights[i] = 1.0 / cfg.p
                    elif x in und_sets[prev]:
                        weights[i] = 1.0
                    else:
                        weights[i] = 1.0 / cfg.q
                weights /= weights.sum()
                walk.append(nbrs[int(rng.choice(len(nbrs), p=weights))])
            walks.append(Walk(walk, g.id))
    return walks


def _uniform_walks(g: DeBruijnGraph, cfg: EmbeddingConfig, rng: np.random.Generator) -> List[Walk]:
    """First-order uniform walks (p=q=1), advanced for all starts at once."""
    adj = _walk_adjacency(g)
    nodes = g.nodes
    pos = {u: i for i, u in enumerate(nodes)}
    degrees = np.array([len(adj[u]) for u in nodes])
    offsets = np.concatenate([[0], np.cumsum(degrees)])
    flat = np.array([pos[v] for u in nodes for v in adj[u]], dtype=np.int64)

    n = len(nodes)
    walks_idx = []
    for _ in range(cfg.walks_per_node):
        cur = np.arange(n)
        trace = [cur]
        active = degrees[cur] > 0
        for _step in range(cfg.walk_length - 1):
            if not active.any():
                break
            nxt = cur.copy()
            a = np.where(active)[0]
            u = rng.random(n)  # one draw per start keeps the stream shape fixed
            deg = degrees[cur[a]]
            pick = (u[a] * deg).astype(np.int64)
            nxt[a] = flat[offsets[cur[a]] + pick]
            trace.append(nxt)
            cur = nxt
            active = active & (degrees[cur] > 0)
        arr = np.stack(trace, axis=1)  # (n, steps)
        walks_idx.append((arr, degrees.copy()))

    walks: List[Walk] = []
    for arr, degs in walks_idx:
        for row in arr:
            # a stuck walk repeats its dead-end node in the trace; trim there
            labels = []
            for j in row:
                labels.append(nodes[j])
                if degs[j] == 0:
                    break
            walks.append(Walk(labels, g.id))
    return walks


# ---------------------------------------------------------------------------
# Skip-gram with negative sampling
# ---------------------------------------------------------------------------

def sgns_batch_loss_grad(
    w_in: np.ndarray,
    w_out: np.ndarray,
    centers: np.ndarray,
    contexts: np.ndarray,
    negatives: np.ndarray,
):
    """Loss and gradients for a batch of (center, context, negatives).

    Returns (loss, grad_centers (B,d), grad_targets (B,1+K,d), targets) where
    targets stacks the positive context before the negatives.
    """
    if negatives.size:
        targets = np.concatenate([contexts[:, None], negatives], axis=1)
    else:
        targets = contexts[:, None]
    vc = w_in[centers]  # (B, d)
    vt = w_out[targets]  # (B, 1+K, d)
    scores = np.matmul(vt, vc[:, :, None])[:, :, 0]
    sig = expit(scores)
    loss = -(
        np.log(sig[:, 0] + _EPS).sum() + np.log(1.0 - sig[:, 1:] + _EPS).sum()
    )
    g = sig.copy()
    g[:, 0] -= 1.0  # d loss / d score
    grad_c = np.matmul(g[:, None, :], vt)[:, 0]
    grad_t = g[..., None] * vc[:, None, :]
    return float(loss), grad_c, grad_t, targets


def _scatter_add(W: np.ndarray, idx: np.ndarray, grad: np.ndarray, lr: float) -> None:
    """W[idx] -= lr * (mean of that row's gradients in the batch).

    Averaging per row keeps each row's step bounded like a single-pair
    update even when a small vocabulary makes every batch hit the same few
    rows thousands of times (summing diverges there). Sparse matmul is much
    faster than np.add.at for the batch sizes used here.
    """
    b = idx.shape[0]
    counts = np.bincount(idx, minlength=W.shape[0]).astype(W.dtype)
    scale = -lr / np.maximum(counts[idx], 1.0)
    sel = sp.csr_matrix(
        (scale.astype(W.dtype), idx, np.arange(b + 1)),
        shape=(b, W.shape[0]),
    )
    W += sel.T @ grad


class NegativeSampler:
    """Walker alias-method sampler over a noise distribution: one uniform
    draw per sample instead of a binary search."""

    def __init__(self, probs: np.ndarray):
        n = probs.shape[0]
        scaled = probs * n / max(probs.sum(), _EPS)
        self.prob = np.ones(n)
        self.alias = np.arange(n)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        scaled = scaled.copy()
        while small and large:
            s, l = small.pop(), large.pop()
            self.prob[s] = scaled[s]
            self.alias[s] = l
            scaled[l] -= 1.0 - scaled[s]
            (small if scaled[l] < 1.0 else large).append(l)

    def sample(self, shape: Tuple[int, int], rng: np.random.Generator) -> np.ndarray:
        if shape[1] == 0:
            return np.empty(shape, dtype=np.int64)
        n = self.prob.shape[0]
        u = rng.random(shape) * n
        j = u.astype(np.int64)
        np.minimum(j, n - 1, out=j)
        frac = u - j
        return np.where(frac < self.prob[j], j, self.alias[j])


class SkipGramModel:
    """Shared-vocabulary skip-gram with negative sampling, trained by
    mini-batch SGD with a linearly decayed learning rate. Single-threaded
    and deterministic under the config seed."""

    def __init__(self, vocab_size: int, cfg: EmbeddingConfig):
        if vocab_size <= 0:
            raise ValueError("empty vocabulary")
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, 101])
        # float32 weights: SGNS is throughput-bound and tolerant of reduced
        # precision; gradients are exact for the dtype used.
        self.w_in = ((rng.random((vocab_size, cfg.dim)) - 0.5) / cfg.dim).astype(np.float32)
        self.w_out = np.zeros((vocab_size, cfg.dim), dtype=np.float32)
        self.vocab_size = vocab_size

    def train_pairs(self, centers: np.ndarray, contexts: np.ndarray) -> List[float]:
        """Train over the given pair stream; returns per-epoch mean loss."""
        cfg = self.cfg
        n_pairs = centers.shape[0]
        if n_pairs == 0:
            return []
        sampler = NegativeSampler(self._noise_distribution(contexts))
        rng = np.random.default_rng([cfg.seed, 202])
        total_updates = max(cfg.epochs * n_pairs, 1)
        done = 0
        losses = []
        for _epoch in range(cfg.epochs):
            order = rng.permutation(n_pairs)
            epoch_loss = 0.0
            for lo in range(0, n_pairs, cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                b = idx.shape[0]
                negs = sampler.sample((b, cfg.negative_samples), rng)
                lr = cfg.lr * max(1e-4, 1.0 - done / total_updates)
                loss, grad_c, grad_t, targets = sgns_batch_loss_grad(
                    self.w_in, self.w_out, centers[idx], contexts[idx], negs
                )
                _scatter_add(self.w_in, centers[idx], grad_c, lr)
                _scatter_add(self.w_out, targets.ravel(), grad_t.reshape(-1, cfg.dim), lr)
                epoch_loss += loss
                done += b
            losses.append(epoch_loss / n_pairs)
        return losses

    def _noise_distribution(self, contexts: np.ndarray) -> np.ndarray:
        counts = np.bincount(contexts, minlength=self.vocab_size).astype(float)
        weights = counts ** 0.75
        total = weights.sum()
        if total == 0:
            return np.full(self.vocab_size, 1.0 / self.vocab_size)
        return weights / total


def walks_to_pairs(
    walks: Sequence[Walk], vocabulary: Dict[str, int], window: int
) -> Tuple[np.ndarray, np.ndarray]:
    """(center, context) id pairs from fixed-window co-occurrence."""
    if not walks:
        return (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    flat = np.fromiter(
        (vocabulary[n] for w in walks for n in w.nodes),
        dtype=np.int64,
    )
    lengths = np.fromiter((len(w.nodes) for w in walks), dtype=np.int64,
                          count=len(walks))
    ends = np.cumsum(lengths)
    starts = ends - lengths
    # distance of each flat position to the end of its walk
    pos_in_walk = np.arange(flat.shape[0]) - np.repeat(starts, lengths)
    remaining = np.repeat(lengths, lengths) - pos_in_walk - 1
    centers_parts: List[np.ndarray] = []
    contexts_parts: List[np.ndarray] = []
    for d in range(1, window + 1):
        left = np.where(remaining >= d)[0]
        if left.size == 0:
            break
        a, b = flat[left], flat[left + d]
        centers_parts.extend((a, b))
        contexts_parts.extend((b, a))
    if not centers_parts:
        return (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
    return np.concatenate(centers_parts), np.concatenate(contexts_parts)


def skipgram_train(
    walks: Sequence[Walk], vocabulary: Dict[str, int], cfg: EmbeddingConfig
) -> np.ndarray:
    """Train node vectors over walk windows; returns |vocab| x dim array."""
    if not walks:
        raise ValueError("no walks to train on")
    model = SkipGramModel(len(vocabulary), cfg)
    centers, contexts = walks_to_pairs(walks, vocabulary, cfg.window)
    model.train_pairs(centers, contexts)
    return model.w_in


# ---------------------------------------------------------------------------
# node2vec graph embedding
# ---------------------------------------------------------------------------

class Node2VecEmbedder(BaseEstimator, TransformerMixin):
    """Corpus-wide node2vec over the shared k-mer vocabulary; a graph's
    vector is the mean of its nodes' trained vectors, weighted by how often
    each k-mer occurs in the read (so composition information survives
    pooling even when most k-mers are present in every graph).

    ``fit`` trains on walks from the given graphs only; ``transform`` can
    embed unseen graphs because the vocabulary is global.
    """

    def __init__(self, cfg: EmbeddingConfig = None):
        self.cfg = cfg

    def fit(self, graph_set: GraphSet, y=None):
        cfg = self.cfg or EmbeddingConfig()
        if not graph_set.graphs:
            raise ValueError("empty graph set")
        walks: List[Walk] = []
        for i, g in enumerate(graph_set.graphs):
            walks.extend(biased_walks(g, cfg, seed=[cfg.seed, 11, i]))
        self.vocabulary_ = dict(graph_set.vocabulary)
        self.node_vectors_ = skipgram_train(walks, self.vocabulary_, cfg)
        return self

    def transform(self, graphs: Union[GraphSet, Sequence[DeBruijnGraph]]) -> np.ndarray:
        if not hasattr(self, "node_vectors_"):
            raise RuntimeError("embedder is not fitted")
        if isinstance(graphs, GraphSet):
            graphs = graphs.graphs
        rows = []
        for g in graphs:
            occ = g.node_multiplicities()
            ids, weights = [], []
            for n in g.nodes:
                if n in self.vocabulary_:
                    ids.append(self.vocabulary_[n])
                    weights.append(occ[n])
            if not ids:
                rows.append(np.zeros(self.node_vectors_.shape[1]))
            else:
                w = np.asarray(weights, dtype=float)
                rows.append((self.node_vectors_[ids] * (w / w.sum())[:, None]).sum(axis=0))
        return np.array(rows)


def node2vec_graph_embedding(
    graph_set: GraphSet, cfg: EmbeddingConfig = None, seed: int = None
) -> GraphEmbedding:
    cfg = cfg or EmbeddingConfig()
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    emb = Node2VecEmbedder(cfg).fit(graph_set)
    return GraphEmbedding(emb.transform(graph_set), "node2vec", cfg)


# ---------------------------------------------------------------------------
# graph2vec: PV-DBOW over WL subtree-label documents
# ---------------------------------------------------------------------------

def wl_relabel_corpus(
    graph_set: GraphSet, height: int, relabeler: WlRelabeler = None
) -> Tuple[List[List[int]], WlRelabeler]:
    """Per-graph documents of compressed WL labels from iterations
    0..height, under one shared label dictionary."""
    if height < 0:
        raise ValueError("height must be >= 0")
    relabeler = relabeler if relabeler is not None else WlRelabeler()
    docs = []
    for g in graph_set.graphs:
        doc: List[int] = []
        for labels in relabeler.iterate(g, height):
            doc.extend(labels[u] for u in g.nodes)
        docs.append(doc)
    return docs, relabeler


class Graph2VecEmbedder(BaseEstimator, TransformerMixin):
    """PV-DBOW document embedding: each graph's vector is trained with
    negative sampling to predict its WL subtree-label tokens.

    ``transform`` embeds unseen graphs by inference: token vectors stay
    frozen and only the new document vectors are trained. Tokens absent
    from the fitted corpus are skipped during inference.
    """

    def __init__(self, cfg: EmbeddingConfig = None):
        self.cfg = cfg

    def fit(self, graph_set: GraphSet, y=None):
        self.fit_transform(graph_set)
        return self

    def fit_transform(self, graph_set: GraphSet, y=None) -> np.ndarray:
        cfg = self.cfg or EmbeddingConfig()
        if not graph_set.graphs:
            raise ValueError("empty graph set")
        self.relabeler_ = WlRelabeler()
        docs, _ = wl_relabel_corpus(graph_set, cfg.wl_height, self.relabeler_)
        self.n_tokens_ = max(len(self.relabeler_.compress), 1)
        rng = np.random.default_rng([cfg.seed, 303])
        doc_vecs = (rng.random((len(docs), cfg.dim)) - 0.5) / cfg.dim
        self.token_vectors_ = np.zeros((self.n_tokens_, cfg.dim))
        self.token_counts_ = np.zeros(self.n_tokens_)
        for doc in docs:
            for t in doc:
                self.token_counts_[t] += 1
        self.embedding_ = self._train(doc_vecs, docs, train_tokens=True, salt=404)
        return self.embedding_

    def transform(self, graphs: Union[GraphSet, Sequence[DeBruijnGraph]]) -> np.ndarray:
        if not hasattr(self, "token_vectors_"):
            raise RuntimeError("embedder is not fitted")
        cfg = self.cfg or EmbeddingConfig()
        if isinstance(graphs, GraphSet):
            graph_list = graphs.graphs
            gs = graphs
        else:
            graph_list = list(graphs)
            gs = GraphSet(graph_list, graph_list[0].k if graph_list else 0, {})
        known = self.n_tokens_
        docs, _ = wl_relabel_corpus(gs, cfg.wl_height, self.relabeler_)
        docs = [[t for t in doc if t < known] for doc in docs]
        rng = np.random.default_rng([cfg.seed, 505])
        doc_vecs = (rng.random((len(docs), cfg.dim)) - 0.5) / cfg.dim
        return self._train(doc_vecs, docs, train_tokens=False, salt=606)

    def _train(self, doc_vecs, docs, train_tokens: bool, salt: int) -> np.ndarray:
        cfg = self.cfg or EmbeddingConfig()
        centers: List[int] = []
        contexts: List[int] = []
        for di, doc in enumerate(docs):
            centers.extend([di] * len(doc))
            contexts.extend(doc)
        centers = np.asarray(centers, dtype=np.int64)
        contexts = np.asarray(contexts, dtype=np.int64)
        n_pairs = centers.shape[0]
        if n_pairs == 0:
            return doc_vecs
        weights = self.token_counts_ ** 0.75
        total_w = weights.sum()
        sampler = NegativeSampler(weights / total_w) if total_w > 0 else None
        rng = np.random.default_rng([cfg.seed, salt])
        total = max(cfg.epochs * n_pairs, 1)
        done = 0
        for _epoch in range(cfg.epochs):
            order = rng.permutation(n_pairs)
            for lo in range(0, n_pairs, cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                b = idx.shape[0]
                if cfg.negative_samples > 0 and sampler is not None:
                    negs = sampler.sample((b, cfg.negative_samples), rng)
                else:
                    negs = np.empty((b, 0), dtype=np.int64)
                lr = cfg.lr * max(1e-4, 1.0 - done / total)
                _, grad_c, grad_t, targets = sgns_batch_loss_grad(
                    doc_vecs, self.token_vectors_, centers[idx], contexts[idx], negs
                )
                _scatter_add(doc_vecs, centers[idx], grad_c, lr)
                if train_tokens:
                    _scatter_add(
                        self.token_vectors_, targets.ravel(),
                        grad_t.reshape(-1, cfg.dim), lr,
                    )
                done += b
        return doc_vecs


def graph2vec_embedding(
    graph_set: GraphSet, cfg: EmbeddingConfig = None, seed: int = None
) -> GraphEmbedding:
    cfg = cfg or EmbeddingConfig()
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    vectors = Graph2VecEmbedder(cfg).fit_transform(graph_set)
    return GraphEmbedding(vectors, "graph2vec", cfg)


# ---------------------------------------------------------------------------
# Persistence: header JSON line + row-major float64 little-endian payload
# ---------------------------------------------------------------------------

def write_embedding(emb: GraphEmbedding, path: Union[str, Path]) -> None:
    header = {
        "method": emb.method,
        "M": int(emb.vectors.shape[0]),
        "dim": int(emb.vectors.shape[1]),
        "cfg": asdict(emb.cfg),
        "seed": emb.cfg.seed,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(emb.vectors.astype("<f8").tobytes(order="C"))


def read_embedding(path: Union[str, Path]) -> GraphEmbedding:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        payload = fh.read()
    vectors = np.frombuffer(payload, dtype="<f8").reshape(header["M"], header["dim"]).copy()
    return GraphEmbedding(vectors, header["method"], EmbeddingConfig(**header["cfg"]))
