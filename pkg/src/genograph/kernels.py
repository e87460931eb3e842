"""Pairwise graph-similarity kernels: shortest-path, Weisfeiler-Lehman,
graphlet sampling, and geometric random walk.

All kernels operate on the undirected simple projection of the De Bruijn
graphs. SPK/WLK/GSK are explicit feature-map kernels, so cross-set rows
(test graphs against training graphs) come for free; RWK is computed pair
by pair on the label-matched direct product graph.
"""
from __future__ import annotations

import itertools
import json
from collections import Counter
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin

from .debruijn import DeBruijnGraph, GraphSet

KERNEL_KINDS = ("spk", "wlk", "gsk", "rwk")


class ProductTooLarge(RuntimeError):
    """Random-walk product graph exceeds the configured node cap."""

    def __init__(self, size: int, cap: int, pair: Tuple[str, str] = ("", "")):
        super().__init__(
            f"product graph has {size} nodes (cap {cap}) for pair {pair[0]!r} x {pair[1]!r}"
        )
        self.size = size
        self.cap = cap
        self.pair = pair

    def report(self) -> dict:
        return {"error": "ProductTooLarge", "size": self.size, "cap": self.cap,
                "pair": list(self.pair)}


@dataclass(frozen=True)
class KernelConfig:
    wl_iterations: int = 3
    graphlet_size: int = 4
    graphlet_samples: int = 200
    rw_lambda: Optional[float] = None  # None -> auto 0.9 / (max degree)^2
    rw_max_iter: int = 200
    rw_tol: float = 1e-10
    rw_product_cap: int = 250_000
    sp_max_length: int = 10

    def __post_init__(self):
        if not (3 <= self.graphlet_size <= 5):
            raise ValueError("graphlet_size must be in 3..5")
        if self.wl_iterations < 0:
            raise ValueError("wl_iterations must be >= 0")
        if self.rw_lambda is not None and self.rw_lambda <= 0:
            raise ValueError("rw_lambda must be positive")


@dataclass
class KernelMatrix:
    values: np.ndarray
    kernel_kind: str
    normalized: bool

    @property
    def m(self) -> int:
        return self.values.shape[0]


# ---------------------------------------------------------------------------
# Shortest-path features
# ---------------------------------------------------------------------------

def _bfs_distances(adj: Dict[str, List[str]], start: str, max_len: int) -> Dict[str, int]:
    dist = {start: 0}
    frontier = [start]
    d = 0
    while frontier and d < max_len:
        d += 1
        nxt = []
        for u in frontier:
            for v in adj[u]:
                if v not in dist:
                    dist[v] = d
                    nxt.append(v)
        frontier = nxt
    return dist


def sp_feature_map(graph: DeBruijnGraph, max_len: int = 10) -> Counter:
    """Multiset of (label_a, label_b, shortest distance) for unordered node
    pairs within ``max_len`` hops, on the undirected simple projection."""
    adj = graph.undirected_adjacency()
    feats: Counter = Counter()
    order = {u: i for i, u in enumerate(graph.nodes)}
    for u in graph.nodes:
        dist = _bfs_distances(adj, u, max_len)
        for v, d in dist.items():
            if order[v] <= order[u]:
                continue  # each unordered pair once
            a, b = sorted((u, v))
            feats[(a, b, d)] += 1
    return feats


# ---------------------------------------------------------------------------
# Weisfeiler-Lehman features
# ---------------------------------------------------------------------------

class WlRelabeler:
    """Shared compression dictionary for WL refinement; ids are assigned by
    first appearance so refits are deterministic."""

    def __init__(self):
        self.compress: Dict[object, int] = {}

    def label_id(self, key) -> int:
        if key not in self.compress:
            self.compress[key] = len(self.compress)
        return self.compress[key]

    def iterate(self, graph: DeBruijnGraph, iterations: int) -> List[Dict[str, int]]:
        """Label assignment per node for iterations 0..h."""
        adj = graph.undirected_adjacency()
        self_loops = {u for (u, v) in graph.edges if u == v}
        labels = {u: self.label_id(("raw", u)) for u in graph.nodes}
        rounds = [labels]
        for _ in range(iterations):
            prev = rounds[-1]
            nxt = {}
            for u in graph.nodes:
                nbr_labels = [prev[v] for v in adj[u]]
                if u in self_loops:
                    nbr_labels.append(prev[u])
                key = (prev[u], tuple(sorted(nbr_labels)))
                nxt[u] = self.label_id(key)
            rounds.append(nxt)
        return rounds


def wl_feature_map(graph: DeBruijnGraph, iterations: int, relabeler: WlRelabeler) -> Counter:
    feats: Counter = Counter()
    for it, labels in enumerate(relabeler.iterate(graph, iterations)):
        for lab in labels.values():
            feats[(it, lab)] += 1
    return feats


# ---------------------------------------------------------------------------
# Graphlet features
# ---------------------------------------------------------------------------

_CANON_CACHE: Dict[Tuple[int, int], int] = {}


def _canonical_certificate(mask: int, s: int) -> int:
    """Minimum adjacency bitmask over all node permutations; identifies the
    isomorphism class of a graph on s unlabeled nodes."""
    cached = _CANON_CACHE.get((s, mask))
    if cached is not None:
        return cached
    bits = [[(mask >> (i * s + j)) & 1 for j in range(s)] for i in range(s)]
    best = None
    for perm in itertools.permutations(range(s)):
        pm = 0
        for i in range(s):
            for j in range(s):
                if bits[perm[i]][perm[j]]:
                    pm |= 1 << (i * s + j)
        if best is None or pm < best:
            best = pm
    _CANON_CACHE[(s, mask)] = best
    return best


def graphlet_histogram(
    graph: DeBruijnGraph, cfg: KernelConfig, rng: np.random.Generator
) -> Optional[Counter]:
    """Sampled distribution over induced-subgraph isomorphism classes.
    Returns None when the graph has fewer nodes than the graphlet size."""
    s = cfg.graphlet_size
    n = graph.num_nodes()
    if n < s:
        return None
    adj = graph.undirected_adjacency()
    nodes = graph.nodes
    hist: Counter = Counter()
    for _ in range(cfg.graphlet_samples):
        idx = rng.choice(n, size=s, replace=False)
        sub = [nodes[i] for i in idx]
        mask = 0
        for i in range(s):
            nbrs = set(adj[sub[i]])
            for j in range(s):
                if i != j and sub[j] in nbrs:
                    mask |= 1 << (i * s + j)
        hist[_canonical_certificate(mask, s)] += 1
    total = sum(hist.values())
    return Counter({k: v / total for k, v in hist.items()})


# ---------------------------------------------------------------------------
# Random-walk kernel
# ---------------------------------------------------------------------------

def _max_degree(graph: DeBruijnGraph) -> int:
    adj = graph.undirected_adjacency()
    return max((len(v) for v in adj.values()), default=0)


def _product_graph(a: DeBruijnGraph, b: DeBruijnGraph, cap: int):
    """Direct product restricted to label-matching node pairs. Node labels
    are the k-mer strings themselves, so a pair matches iff the k-mers are
    equal."""
    b_index: Dict[str, int] = {}
    common = [u for u in a.nodes if u in set(b.nodes)]
    size = len(common)  # one product node per shared k-mer label
    if size > cap:
        raise ProductTooLarge(size, cap, (a.id, b.id))
    if size == 0:
        return [], sp.csr_matrix((0, 0))
    pos = {u: i for i, u in enumerate(common)}
    adj_a = a.undirected_adjacency()
    adj_b = b.undirected_adjacency()
    rows, cols = [], []
    for u in common:
        i = pos[u]
        nbrs_b = set(adj_b[u])
        for v in adj_a[u]:
            if v in pos and v in nbrs_b:
                rows.append(i)
                cols.append(pos[v])
    data = np.ones(len(rows))
    W = sp.csr_matrix((data, (rows, cols)), shape=(size, size))
    return common, W


def _rw_lambda(a: DeBruijnGraph, b: DeBruijnGraph, cfg: KernelConfig) -> float:
    if cfg.rw_lambda is not None:
        return cfg.rw_lambda
    d = max(_max_degree(a) * _max_degree(b), 1)
    return 0.9 / d


def random_walk_kernel(a: DeBruijnGraph, b: DeBruijnGraph, cfg: KernelConfig = None) -> float:
    """Geometric random-walk similarity: sum of (I - lambda W)^-1 1 over the
    label-matched product graph, by fixed-point iteration."""
    cfg = cfg or KernelConfig()
    _, W = _product_graph(a, b, cfg.rw_product_cap)
    n = W.shape[0]
    if n == 0:
        return 0.0
    lam = _rw_lambda(a, b, cfg)
    ones = np.ones(n)
    x = ones.copy()
    for _ in range(cfg.rw_max_iter):
        x_new = ones + lam * (W @ x)
        if np.max(np.abs(x_new - x)) < cfg.rw_tol:
            x = x_new
            break
        x = x_new
    return float(x.sum())


# ---------------------------------------------------------------------------
# Pairwise entry points
# ---------------------------------------------------------------------------

def _dot(f: Counter, g: Counter) -> float:
    if len(g) < len(f):
        f, g = g, f
    return float(sum(v * g[k] for k, v in f.items() if k in g))


def shortest_path_kernel(a: DeBruijnGraph, b: DeBruijnGraph, max_len: int = 10) -> float:
    return _dot(sp_feature_map(a, max_len), sp_feature_map(b, max_len))


def wl_kernel(a: DeBruijnGraph, b: DeBruijnGraph, iterations: int = 3) -> float:
    relabeler = WlRelabeler()
    return _dot(
        wl_feature_map(a, iterations, relabeler), wl_feature_map(b, iterations, relabeler)
    )


def graphlet_kernel(
    a: DeBruijnGraph, b: DeBruijnGraph, cfg: KernelConfig = None, seed: int = 0
) -> float:
    cfg = cfg or KernelConfig()
    # the sampling stream is a function of (seed, graph content), so two
    # structurally identical graphs draw identical subsets
    ha = graphlet_histogram(a, cfg, np.random.default_rng([seed, _content_key(a)]))
    hb = graphlet_histogram(b, cfg, np.random.default_rng([seed, _content_key(b)]))
    if ha is None or hb is None:
        return 0.0
    return _dot(ha, hb)


# ---------------------------------------------------------------------------
# Matrix-level computation
# ---------------------------------------------------------------------------

def _feature_maps(
    graphs: Sequence[DeBruijnGraph],
    kind: str,
    cfg: KernelConfig,
    seed: int,
    relabeler: WlRelabeler = None,
) -> List[Optional[Counter]]:
    if kind == "spk":
        return [sp_feature_map(g, cfg.sp_max_length) for g in graphs]
    if kind == "wlk":
        relabeler = relabeler if relabeler is not None else WlRelabeler()
        return [wl_feature_map(g, cfg.wl_iterations, relabeler) for g in graphs]
    if kind == "gsk":
        out = []
        for i, g in enumerate(graphs):
            rng = np.random.default_rng([seed, _stable_graph_key(g, i)])
            out.append(graphlet_histogram(g, cfg, rng))
        return out
    raise ValueError(f"unknown feature-map kernel kind {kind!r}")


def _stable_graph_key(g: DeBruijnGraph, fallback: int) -> int:
    # per-graph sampling seed tied to graph content so fold subsets reuse
    # the same graphlet histograms
    return _content_key(g)


def _content_key(g: DeBruijnGraph) -> int:
    canon = "|".join(sorted(g.nodes)) + "#" + "|".join(
        f"{u}>{v}" for u, v in sorted(g.edges)
    )
    return hash_str(canon)


def hash_str(s: str) -> int:
    h = 2166136261
    for ch in s.encode():
        h = ((h ^ ch) * 16777619) & 0xFFFFFFFF
    return h


def _sparse_matrix(
    feats: Sequence[Optional[Counter]], index: Dict[object, int], grow: bool
) -> sp.csr_matrix:
    rows, cols, data = [], [], []
    for i, f in enumerate(feats):
        if f is None:
            continue
        for key, val in f.items():
            j = index.get(key)
            if j is None:
                if not grow:
                    continue  # unseen feature cannot match training graphs
                j = len(index)
                index[key] = j
            rows.append(i)
            cols.append(j)
            data.append(float(val))
    return sp.csr_matrix((data, (rows, cols)), shape=(len(feats), max(len(index), 1)))


def _self_sims(feats: Sequence[Optional[Counter]]) -> np.ndarray:
    return np.array([0.0 if f is None else sum(v * v for v in f.values()) for f in feats])


def _normalize(values: np.ndarray, diag_rows: np.ndarray, diag_cols: np.ndarray) -> np.ndarray:
    denom = np.sqrt(np.outer(diag_rows, diag_cols))
    out = np.zeros_like(values)
    np.divide(values, denom, out=out, where=denom > 0)
    return out


def kernel_matrix(
    graph_set: GraphSet,
    kind: str,
    cfg: KernelConfig = None,
    seed: int = 0,
    normalized: bool = True,
) -> KernelMatrix:
    """Full symmetric M x M similarity matrix. Each unordered pair is
    computed once and mirrored, so the result is bitwise symmetric."""
    cfg = cfg or KernelConfig()
    kind = kind.lower()
    if kind not in KERNEL_KINDS:
        raise ValueError(f"unknown kernel kind {kind!r}")
    graphs = graph_set.graphs
    if not graphs:
        raise ValueError("empty graph set")
    m = len(graphs)

    if kind == "rwk":
        values = np.zeros((m, m))
        for i in range(m):
            for j in range(i, m):
                values[i, j] = random_walk_kernel(graphs[i], graphs[j], cfg)
        diag = values.diagonal().copy()
    else:
        feats = _feature_maps(graphs, kind, cfg, seed)
        index: Dict[object, int] = {}
        X = _sparse_matrix(feats, index, grow=True)
        gram = (X @ X.T).toarray()
        values = np.triu(gram)
        diag = _self_sims(feats)
        np.fill_diagonal(values, diag)

    # mirror the upper triangle for bitwise symmetry
    values = values + np.triu(values, 1).T
    if normalized:
        values = _normalize(values, diag, diag)
        np.fill_diagonal(values, np.where(diag > 0, 1.0, 0.0))
        values = np.triu(values) + np.triu(values, 1).T
    return KernelMatrix(values=values, kernel_kind=kind, normalized=normalized)


class GraphKernelTransformer(BaseEstimator, TransformerMixin):
    """Kernel features against a fixed training set.

    ``fit`` stores the training graphs; ``transform`` returns one row per
    graph holding its kernel values against every training graph, so the
    feature dimension equals the training-set size. Unseen substructures in
    test graphs contribute only to their self-similarity (normalization),
    never to the match counts.
    """

    def __init__(self, kind: str = "wlk", cfg: KernelConfig = None,
                 normalized: bool = True, seed: int = 0):
        self.kind = kind
        self.cfg = cfg
        self.normalized = normalized
        self.seed = seed

    def fit(self, graphs: Sequence[DeBruijnGraph], y=None):
        cfg = self.cfg or KernelConfig()
        kind = self.kind.lower()
        if kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        self.train_graphs_ = list(graphs)
        if kind == "rwk":
            self.train_self_ = np.array(
                [random_walk_kernel(g, g, cfg) for g in self.train_graphs_]
            )
        else:
            self.relabeler_ = WlRelabeler() if kind == "wlk" else None
            feats = _feature_maps(self.train_graphs_, kind, cfg, self.seed, self.relabeler_)
            self.feature_index_: Dict[object, int] = {}
            self.train_X_ = _sparse_matrix(feats, self.feature_index_, grow=True)
            self.train_self_ = _self_sims(feats)
        return self

    def transform(self, graphs: Sequence[DeBruijnGraph]) -> np.ndarray:
        if not hasattr(self, "train_graphs_"):
            raise RuntimeError("transformer is not fitted")
        cfg = self.cfg or KernelConfig()
        kind = self.kind.lower()
        graphs = list(graphs)
        if kind == "rwk":
            values = np.array(
                [[random_walk_kernel(g, t, cfg) for t in self.train_graphs_] for g in graphs]
            )
            self_sims = np.array([random_walk_kernel(g, g, cfg) for g in graphs])
        else:
            feats = _feature_maps(graphs, kind, cfg, self.seed, getattr(self, "relabeler_", None))
            X = _sparse_matrix(feats, self.feature_index_, grow=False)
            values = (X @ self.train_X_.T).toarray()
            self_sims = _self_sims(feats)
        if self.normalized:
            values = _normalize(values, self_sims, self.train_self_)
        return values


# ---------------------------------------------------------------------------
# Persistence: header JSON line + row-major float64 little-endian payload
# ---------------------------------------------------------------------------

def write_kernel_matrix(
    km: KernelMatrix, path: Union[str, Path], cfg: KernelConfig = None, seed: int = 0
) -> None:
    header = {
        "kind": km.kernel_kind,
        "M": km.m,
        "normalized": km.normalized,
        "cfg": asdict(cfg or KernelConfig()),
        "seed": seed,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(km.values.astype("<f8").tobytes(order="C"))


def read_kernel_matrix(path: Union[str, Path]) -> Tuple[KernelMatrix, dict]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        payload = fh.read()
    m = header["M"]
    values = np.frombuffer(payload, dtype="<f8").reshape(m, m).copy()
    return KernelMatrix(values, header["kind"], header["normalized"]), header
