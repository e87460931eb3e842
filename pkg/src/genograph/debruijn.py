"""k-mer tokenization, per-read De Bruijn graphs, and k-mer frequency features."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .sequence_io import Read


@dataclass(frozen=True)
class KmerSequence:
    k: int
    tokens: Tuple[str, ...]

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class DeBruijnGraph:
    """Directed graph of the distinct k-mers of one read.

    ``edges`` maps an ordered (u, v) k-mer pair to its multiplicity, i.e. the
    number of times v immediately follows u in the read.
    """

    nodes: List[str]
    edges: Dict[Tuple[str, str], int]
    label: str
    k: int
    id: str = ""

    _adj: Dict[str, List[str]] = field(default=None, repr=False, compare=False)

    def num_nodes(self) -> int:
        return len(self.nodes)

    def num_edges(self) -> int:
        return len(self.edges)

    def total_multiplicity(self) -> int:
        return sum(self.edges.values())

    def undirected_adjacency(self) -> Dict[str, List[str]]:
        """Simple undirected projection (multiplicity dropped, self-loops
        dropped); neighbor lists sorted for determinism."""
        if self._adj is None:
            adj = {u: set() for u in self.nodes}
            for (u, v) in self.edges:
                if u != v:
                    adj[u].add(v)
                    adj[v].add(u)
            self._adj = {u: sorted(nbrs) for u, nbrs in adj.items()}
        return self._adj

    def node_multiplicities(self) -> Dict[str, int]:
        """Occurrence count of each k-mer in the underlying read.

        Every occurrence after a node's first token arrives through an
        incoming edge, and ``nodes[0]`` is the read's first k-mer, so the
        counts are exact: occ(v) = sum of incoming multiplicities, plus one
        for the first token.
        """
        occ = {u: 0 for u in self.nodes}
        for (u, v), m in self.edges.items():
            occ[v] += m
        if self.nodes:
            occ[self.nodes[0]] += 1
        return occ

    def out_adjacency(self) -> Dict[str, List[str]]:
        """Directed simple adjacency, neighbor lists sorted."""
        adj = {u: set() for u in self.nodes}
        for (u, v) in self.edges:
            adj[u].add(v)
        return {u: sorted(nbrs) for u, nbrs in adj.items()}


def extract_kmers(read: Union[Read, str], k: int) -> KmerSequence:
    """Sliding window of every length-k substring, N-k+1 tokens."""
    bases = read.bases if isinstance(read, Read) else read
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(bases) < k:
        raise ValueError(f"read length {len(bases)} < k={k}")
    return KmerSequence(k, tuple(bases[i : i + k] for i in range(len(bases) - k + 1)))


def build_debruijn(kmers: KmerSequence, label: str, graph_id: str = "") -> DeBruijnGraph:
    """Merge repeated k-mers into single nodes; consecutive tokens become
    directed edges with multiplicity."""
    if not kmers.tokens:
        raise ValueError("empty k-mer sequence")
    nodes: List[str] = []
    seen = set()
    for t in kmers.tokens:
        if t not in seen:
            seen.add(t)
            nodes.append(t)
    edges: Dict[Tuple[str, str], int] = {}
    for u, v in zip(kmers.tokens, kmers.tokens[1:]):
        edges[(u, v)] = edges.get((u, v), 0) + 1
    return DeBruijnGraph(nodes=nodes, edges=edges, label=label, k=kmers.k, id=graph_id)


def read_to_graph(read: Read, k: int) -> DeBruijnGraph:
    return build_debruijn(extract_kmers(read, k), read.label, graph_id=read.id)


@dataclass
class GraphSet:
    graphs: List[DeBruijnGraph]
    k: int
    vocabulary: Dict[str, int]

    def __len__(self) -> int:
        return len(self.graphs)

    def labels(self) -> List[str]:
        return [g.label for g in self.graphs]

    def subset(self, indices: Sequence[int]) -> "GraphSet":
        # vocabulary stays global so feature indices survive fold splits
        return GraphSet([self.graphs[i] for i in indices], self.k, self.vocabulary)


def build_graph_set(reads: Sequence[Read], k: int) -> GraphSet:
    """Build one graph per read plus the shared k-mer vocabulary.

    Vocabulary ids follow first appearance over the dataset, then freeze.
    """
    graphs = [read_to_graph(r, k) for r in reads]
    vocabulary: Dict[str, int] = {}
    for g in graphs:
        for node in g.nodes:
            if node not in vocabulary:
                vocabulary[node] = len(vocabulary)
    return GraphSet(graphs, k, vocabulary)


def kmer_frequency_vector(
    read: Union[Read, str], k: int, vocabulary: Dict[str, int]
) -> np.ndarray:
    """Normalized k-mer counts over the fixed vocabulary; k-mers outside the
    vocabulary contribute to the divisor but to no component."""
    kmers = extract_kmers(read, k)
    vec = np.zeros(len(vocabulary))
    for t in kmers.tokens:
        j = vocabulary.get(t)
        if j is not None:
            vec[j] += 1.0
    return vec / len(kmers.tokens)


class KmerFrequencyVectorizer(BaseEstimator, TransformerMixin):
    """Map reads to normalized k-mer frequency vectors.

    A fixed vocabulary can be supplied (e.g. the GraphSet's); otherwise fit
    assigns ids by first appearance over the fitted reads.
    """

    def __init__(self, k: int = 6, vocabulary: Dict[str, int] = None):
        self.k = k
        self.vocabulary = vocabulary

    def fit(self, reads: Sequence[Read], y=None):
        if self.vocabulary is not None:
            self.vocabulary_ = dict(self.vocabulary)
            return self
        vocab: Dict[str, int] = {}
        for r in reads:
            for t in extract_kmers(r, self.k).tokens:
                if t not in vocab:
                    vocab[t] = len(vocab)
        self.vocabulary_ = vocab
        return self

    def transform(self, reads: Sequence[Read]) -> np.ndarray:
        if not hasattr(self, "vocabulary_"):
            raise RuntimeError("vectorizer is not fitted")
        return np.array([kmer_frequency_vector(r, self.k, self.vocabulary_) for r in reads])


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def clustering_coefficient(graph: DeBruijnGraph) -> float:
    """Mean local clustering coefficient on the undirected simple projection."""
    adj = graph.undirected_adjacency()
    total = 0.0
    for u, nbrs in adj.items():
        d = len(nbrs)
        if d < 2:
            continue
        links = 0
        for i, a in enumerate(nbrs):
            a_nbrs = set(adj[a])
            links += sum(1 for b in nbrs[i + 1 :] if b in a_nbrs)
        total += 2.0 * links / (d * (d - 1))
    return total / len(adj) if adj else 0.0


@dataclass
class GraphSetStats:
    avg_nodes: float
    sd_nodes: float
    avg_edges: float
    sd_edges: float
    unique_labels: int
    avg_clustering: float
    sd_clustering: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def graph_stats(graph_set: GraphSet) -> GraphSetStats:
    """Summary statistics (population sd) over a set of graphs."""
    if not graph_set.graphs:
        raise ValueError("empty graph set")
    nodes = np.array([g.num_nodes() for g in graph_set.graphs], dtype=float)
    edges = np.array([g.num_edges() for g in graph_set.graphs], dtype=float)
    clust = np.array([clustering_coefficient(g) for g in graph_set.graphs])
    unique = set()
    for g in graph_set.graphs:
        unique.update(g.nodes)
    return GraphSetStats(
        avg_nodes=float(nodes.mean()),
        sd_nodes=float(nodes.std()),
        avg_edges=float(edges.mean()),
        sd_edges=float(edges.std()),
        unique_labels=len(unique),
        avg_clustering=float(clust.mean()),
        sd_clustering=float(clust.std()),
    )


# ---------------------------------------------------------------------------
# Serialization (JSON Lines, one graph per line)
# ---------------------------------------------------------------------------

def graph_to_record(graph: DeBruijnGraph) -> dict:
    return {
        "id": graph.id,
        "label": graph.label,
        "k": graph.k,
        "nodes": list(graph.nodes),
        "edges": [[u, v, m] for (u, v), m in graph.edges.items()],
    }


def graph_from_record(rec: dict) -> DeBruijnGraph:
    edges = {(u, v): int(m) for u, v, m in rec["edges"]}
    return DeBruijnGraph(
        nodes=list(rec["nodes"]), edges=edges, label=rec["label"], k=int(rec["k"]), id=rec["id"]
    )


def write_graphs_jsonl(graph_set: GraphSet, path: Union[str, Path]) -> None:
    with open(path, "w") as fh:
        for g in graph_set.graphs:
            fh.write(json.dumps(graph_to_record(g), sort_keys=True) + "\n")


def read_graphs_jsonl(path: Union[str, Path]) -> GraphSet:
    graphs = []
    k = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            g = graph_from_record(json.loads(line))
            graphs.append(g)
            k = g.k if k is None else k
    if not graphs:
        raise ValueError(f"no graphs in {path}")
    vocabulary: Dict[str, int] = {}
    for g in graphs:
        for node in g.nodes:
            if node not in vocabulary:
                vocabulary[node] = len(vocabulary)
    return GraphSet(graphs, k, vocabulary)
