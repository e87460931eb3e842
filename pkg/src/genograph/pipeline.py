"""Experiment orchestration: configuration, stratified repeated k-fold CV
with leakage-free transductive features, ablations, and report emission.

Every random component draws its seed through ``derive_seed``, a pure
function of (master seed, component path), so a whole experiment is
reproducible from its config file alone.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .sequence_io import (
    Dataset,
    SimulationConfig,
    simulate_dataset,
    synthetic_reference,
    HOST,
    PATHOGEN,
)
from .debruijn import GraphSet, build_graph_set, KmerFrequencyVectorizer
from .kernels import (
    KERNEL_KINDS,
    KernelConfig,
    ProductTooLarge,
    hash_str,
    kernel_matrix,
)
from .embed import EmbeddingConfig, Node2VecEmbedder, Graph2VecEmbedder
from .baselines import LogisticRegressionClassifier, SmoSvmClassifier, kmeans2
from .deepnet import LossConfig, MultiTaskClassifier, TrainSchedule

FEATURE_KINDS = ("kmer_freq", "node2vec", "graph2vec") + KERNEL_KINDS
CLASSIFIER_KINDS = ("kmeans", "logreg", "svm", "dl", "nn", "no_decoder")


def derive_seed(master: int, *parts) -> int:
    """Pure (master, component path) -> 32-bit seed via SeedSequence;
    string parts are folded in through a stable FNV hash."""
    ints = [int(master)]
    for p in parts:
        ints.append(hash_str(p) if isinstance(p, str) else int(p))
    return int(np.random.SeedSequence(ints).generate_state(1)[0])


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    per_class: int = 500
    seed: int = 0
    read_length: int = 150
    reference_length: int = 150_000
    q_min: int = 28
    q_max: int = 35
    k: int = 6
    feature_kind: str = "node2vec"
    embedding: dict = field(default_factory=dict)  # EmbeddingConfig overrides
    kernel: dict = field(default_factory=dict)  # KernelConfig overrides
    classifier_kind: str = "dl"
    classifier_params: dict = field(default_factory=dict)
    cv_folds: int = 10
    cv_iterations: int = 10

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.feature_kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.feature_kind!r}")
        if self.classifier_kind not in CLASSIFIER_KINDS:
            raise ValueError(f"unknown classifier kind {self.classifier_kind!r}")

    def embedding_config(self, seed: int) -> EmbeddingConfig:
        return EmbeddingConfig(**{**self.embedding, "seed": seed})

    def kernel_config(self) -> KernelConfig:
        return KernelConfig(**self.kernel)

    def replaced(self, **kwargs) -> "ExperimentConfig":
        data = asdict(self)
        data.update(kwargs)
        return ExperimentConfig(**data)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "ExperimentConfig":
        path = Path(path)
        if path.suffix == ".toml":
            try:
                import tomllib as toml_reader
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as toml_reader

            data = toml_reader.loads(path.read_text())
        else:
            data = json.loads(path.read_text())
        return cls(**data)


@dataclass
class FoldReport:
    iteration: int
    fold: int
    accuracy: float
    precision: Dict[str, float]
    recall: Dict[str, float]
    confusion: Dict[str, int]
    n_test: int


@dataclass
class CvResult:
    config: ExperimentConfig
    mean_accuracy: Optional[float]
    sd_accuracy: Optional[float]
    folds: List[FoldReport]
    skipped: bool = False
    skip_reason: Optional[dict] = None

    def reported_sd(self) -> Optional[float]:
        """Reported sd: shown only above 0.01 percentage points."""
        if self.sd_accuracy is None:
            return None
        return self.sd_accuracy if self.sd_accuracy * 100.0 > 0.01 else None

    def summary(self) -> dict:
        return {
            "name": self.config.name,
            "feature_kind": self.config.feature_kind,
            "classifier_kind": self.config.classifier_kind,
            "k": self.config.k,
            "mean_accuracy": self.mean_accuracy,
            "sd_accuracy": self.sd_accuracy,
            "reported_sd": self.reported_sd(),
            "n_folds": len(self.folds),
            "skipped": self.skipped,
            "skip_reason": self.skip_reason,
        }


# ---------------------------------------------------------------------------
# Folds and metrics
# ---------------------------------------------------------------------------

def stratified_folds(
    labels: Sequence[str], folds: int, iteration: int, master_seed: int
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Per-iteration reshuffled stratified folds; per-fold class imbalance
    is at most one sample."""
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n < folds:
        raise ValueError(f"{n} samples cannot fill {folds} folds")
    rng = np.random.default_rng(derive_seed(master_seed, "folds", iteration))
    fold_of = np.empty(n, dtype=int)
    for cls in np.unique(labels):
        idx = np.where(labels == cls)[0]
        idx = rng.permutation(idx)
        for pos, sample in enumerate(idx):
            fold_of[sample] = pos % folds
    out = []
    for f in range(folds):
        test = np.where(fold_of == f)[0]
        train = np.where(fold_of != f)[0]
        out.append((train, test))
    return out


def fold_metrics(
    y_true: Sequence[str], y_pred: Sequence[str], iteration: int, fold: int
) -> FoldReport:
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    accuracy = float((y_true == y_pred).mean())
    precision, recall, confusion = {}, {}, {}
    for actual in (HOST, PATHOGEN):
        for predicted in (HOST, PATHOGEN):
            confusion[f"{actual}_as_{predicted}"] = int(
                ((y_true == actual) & (y_pred == predicted)).sum()
            )
    for cls in (HOST, PATHOGEN):
        pred_cls = (y_pred == cls).sum()
        true_cls = (y_true == cls).sum()
        tp = ((y_true == cls) & (y_pred == cls)).sum()
        precision[cls] = float(tp / pred_cls) if pred_cls else 0.0
        recall[cls] = float(tp / true_cls) if true_cls else 0.0
    return FoldReport(iteration, fold, accuracy, precision, recall,
                      confusion, int(y_true.shape[0]))


# ---------------------------------------------------------------------------
# Session: cached dataset / graphs / features shared across runs
# ---------------------------------------------------------------------------

class ExperimentSession:
    """Caches the artifacts that are pure functions of the config's data
    parameters, so related runs (ablations, variant comparisons) share
    datasets, graphs, kernel matrices, and per-fold embeddings."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self._dataset: Optional[Dataset] = None
        self._graph_sets: Dict[int, GraphSet] = {}
        self._kernels: Dict[Tuple[int, str], np.ndarray] = {}
        self._kmer_features: Dict[int, np.ndarray] = {}
        self._fold_features: Dict[tuple, Tuple[np.ndarray, np.ndarray]] = {}

    def dataset(self) -> Dataset:
        if self._dataset is None:
            sim = SimulationConfig(
                read_length=self.cfg.read_length,
                q_min=self.cfg.q_min,
                q_max=self.cfg.q_max,
                reads_per_class=self.cfg.per_class,
                rng_seed=derive_seed(self.cfg.seed, "simulate"),
            )
            self._dataset = simulate_dataset(
                sim,
                host_reference=synthetic_reference(HOST, length=self.cfg.reference_length),
                pathogen_reference=synthetic_reference(PATHOGEN, length=self.cfg.reference_length),
                name=self.cfg.name,
            )
        return self._dataset

    def graph_set(self, k: int) -> GraphSet:
        if k not in self._graph_sets:
            self._graph_sets[k] = build_graph_set(self.dataset().reads, k)
        return self._graph_sets[k]

    def kernel_values(self, k: int, kind: str) -> np.ndarray:
        """Full normalized kernel matrix; fold features are row/column
        slices of it (entry (i, j) depends only on graphs i and j, so
        slicing to training columns is leakage-free)."""
        key = (k, kind)
        if key not in self._kernels:
            km = kernel_matrix(
                self.graph_set(k), kind, self.cfg.kernel_config(),
                seed=derive_seed(self.cfg.seed, "kernel", kind, k), normalized=True,
            )
            self._kernels[key] = km.values
        return self._kernels[key]

    def kmer_features(self, k: int) -> np.ndarray:
        if k not in self._kmer_features:
            gs = self.graph_set(k)
            vec = KmerFrequencyVectorizer(k=k, vocabulary=gs.vocabulary).fit([])
            self._kmer_features[k] = vec.transform(self.dataset().reads)
        return self._kmer_features[k]

    def fold_features(
        self, feature_kind: str, k: int, iteration: int, fold: int,
        train_idx: np.ndarray, test_idx: np.ndarray, embedding: dict,
    ) -> Tuple[np.ndarray, np.ndarray]:
        """(train rows, test rows) for one fold, leakage-free per kind."""
        key = (feature_kind, k, iteration, fold, tuple(sorted(embedding.items())))
        if key in self._fold_features:
            return self._fold_features[key]

        if feature_kind in KERNEL_KINDS:
            K = self.kernel_values(k, feature_kind)
            out = (K[np.ix_(train_idx, train_idx)], K[np.ix_(test_idx, train_idx)])
        elif feature_kind == "kmer_freq":
            X = self.kmer_features(k)
            out = (X[train_idx], X[test_idx])
        else:
            gs = self.graph_set(k)
            seed = derive_seed(self.cfg.seed, "embed", feature_kind, k, iteration, fold)
            ecfg = EmbeddingConfig(**{**embedding, "seed": seed})
            train_set = gs.subset(train_idx)
            if feature_kind == "node2vec":
                emb = Node2VecEmbedder(ecfg).fit(train_set)
                out = (emb.transform(train_set), emb.transform(gs.subset(test_idx)))
            else:  # graph2vec
                emb = Graph2VecEmbedder(ecfg)
                train_rows = emb.fit_transform(train_set)
                out = (train_rows, emb.transform(gs.subset(test_idx)))
        self._fold_features[key] = out
        return out


# ---------------------------------------------------------------------------
# Classifier dispatch
# ---------------------------------------------------------------------------

def _make_classifier(kind: str, params: dict, seed: int):
    if kind == "logreg":
        return LogisticRegressionClassifier(C=params.get("C", 10.0))
    if kind == "svm":
        return SmoSvmClassifier(
            C=params.get("C", 1.0), kernel=params.get("kernel", "rbf"),
            gamma=params.get("gamma"), seed=seed,
        )
    if kind in ("dl", "nn", "no_decoder"):
        variant = {"dl": "multitask", "nn": "classifier_only",
                   "no_decoder": "no_decoder"}[kind]
        schedule = TrainSchedule(**{**params.get("schedule", {}), "seed": seed})
        loss_cfg = LossConfig(
            lambda1=params.get("lambda1", 2.0), lambda2=params.get("lambda2", 0.5),
        )
        return MultiTaskClassifier(
            schedule=schedule, loss_cfg=loss_cfg, variant=variant,
            auto_class_weights=params.get("auto_class_weights", True),
        )
    raise ValueError(f"no supervised classifier of kind {kind!r}")


def _run_fold(cfg, Xtr, Xte, ytr, yte, iteration, fold) -> FoldReport:
    kind = cfg.classifier_kind
    seed = derive_seed(cfg.seed, "clf", kind, iteration, fold)
    ytr = np.asarray(ytr)
    yte = np.asarray(yte)
    if kind == "kmeans":
        res = kmeans2(Xtr, seed=seed)
        # assign clusters to labels using training labels only
        centroids = res.centroids
        train_assign = res.assignments
        maps = []
        for perm in ((HOST, PATHOGEN), (PATHOGEN, HOST)):
            mapped = np.array([perm[a] for a in train_assign])
            maps.append(((mapped == ytr).mean(), perm))
        _, best = max(maps, key=lambda t: t[0])
        d = np.stack([np.sum((Xte - c) ** 2, axis=1) for c in centroids])
        pred = np.array([best[a] for a in np.argmin(d, axis=0)])
    else:
        model = _make_classifier(kind, cfg.classifier_params, seed)
        model.fit(Xtr, ytr)
        pred = model.predict(Xte)
    return fold_metrics(yte, pred, iteration, fold)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def run_cv(cfg: ExperimentConfig, session: ExperimentSession = None) -> CvResult:
    """Stratified cv_iterations x cv_folds cross-validation."""
    session = session or ExperimentSession(cfg)
    labels = np.asarray(session.dataset().labels())
    try:
        reports: List[FoldReport] = []
        for iteration in range(cfg.cv_iterations):
            for fold, (train_idx, test_idx) in enumerate(
                stratified_folds(labels, cfg.cv_folds, iteration, cfg.seed)
            ):
                Xtr, Xte = session.fold_features(
                    cfg.feature_kind, cfg.k, iteration, fold,
                    train_idx, test_idx, cfg.embedding,
                )
                reports.append(_run_fold(
                    cfg, Xtr, Xte, labels[train_idx], labels[test_idx],
                    iteration, fold,
                ))
    except ProductTooLarge as exc:
        return CvResult(cfg, None, None, [], skipped=True, skip_reason=exc.report())
    accs = np.array([r.accuracy for r in reports])
    return CvResult(cfg, float(accs.mean()), float(accs.std()), reports)


def ablate_k(
    cfg: ExperimentConfig,
    k_values: Sequence[int] = (2, 3, 4, 5, 6),
    methods: Sequence[str] = ("node2vec", "spk"),
    session: ExperimentSession = None,
) -> List[dict]:
    """Full pipeline re-run per (k, feature method); one row per pair."""
    session = session or ExperimentSession(cfg)
    if cfg.read_length < max(k_values):
        raise ValueError("read length shorter than the largest k")
    rows = []
    for method in methods:
        for k in k_values:
            result = run_cv(cfg.replaced(k=k, feature_kind=method), session)
            rows.append({
                "k": k,
                "method": method,
                "classifier": cfg.classifier_kind,
                "mean_accuracy": result.mean_accuracy,
                "sd_accuracy": result.sd_accuracy,
            })
    return rows


def ablate_objective(
    cfg: ExperimentConfig, session: ExperimentSession = None
) -> Dict[str, CvResult]:
    """DL vs NN vs no-decoder on identical folds, fold features shared."""
    session = session or ExperimentSession(cfg)
    out = {}
    for kind in ("dl", "nn", "no_decoder"):
        out[kind] = run_cv(cfg.replaced(classifier_kind=kind), session)
    return out


def paired_deltas(results: Dict[str, CvResult]) -> Dict[str, float]:
    """Mean per-fold accuracy differences of DL against each ablation."""
    base = results["dl"]
    out = {}
    for kind in ("nn", "no_decoder"):
        other = results[kind]
        if base.skipped or other.skipped:
            out[kind] = float("nan")
            continue
        diffs = [a.accuracy - b.accuracy for a, b in zip(base.folds, other.folds)]
        out[kind] = float(np.mean(diffs))
    return out


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

def _csv_bytes(rows: List[dict], columns: List[str]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([
            f"{v:.2f}" if isinstance(v, float) else v
            for v in (row[c] for c in columns)
        ])
    return buf.getvalue().encode()


def emit_report(
    result: Union[CvResult, Sequence[CvResult]],
    out_dir: Union[str, Path],
    k_table: List[dict] = None,
) -> Dict[str, Path]:
    """Write per-fold CSV, full-precision JSON summary, and optional
    accuracy-vs-k plot data. Output bytes are a pure function of the
    inputs, so re-emission is byte-identical."""
    results = [result] if isinstance(result, CvResult) else list(result)
    if not results and not k_table:
        raise ValueError("nothing to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: Dict[str, Path] = {}

    fold_rows = []
    for res in results:
        for r in res.folds:
            fold_rows.append({
                "name": res.config.name,
                "feature_kind": res.config.feature_kind,
                "classifier_kind": res.config.classifier_kind,
                "iteration": r.iteration,
                "fold": r.fold,
                "accuracy": r.accuracy * 100.0,
                "precision_host": r.precision[HOST] * 100.0,
                "precision_pathogen": r.precision[PATHOGEN] * 100.0,
                "recall_host": r.recall[HOST] * 100.0,
                "recall_pathogen": r.recall[PATHOGEN] * 100.0,
                "n_test": r.n_test,
            })
    columns = ["name", "feature_kind", "classifier_kind", "iteration", "fold",
               "accuracy", "precision_host", "precision_pathogen",
               "recall_host", "recall_pathogen", "n_test"]
    folds_path = out_dir / "folds.csv"
    folds_path.write_bytes(_csv_bytes(fold_rows, columns))
    written["folds"] = folds_path

    summary = {
        "runs": [res.summary() for res in results],
        "config": asdict(results[0].config) if results else None,
    }
    summary_path = out_dir / "summary.json"
    summary_path.write_bytes(
        (json.dumps(summary, indent=2, sort_keys=True) + "\n").encode()
    )
    written["summary"] = summary_path

    if k_table is not None:
        k_path = out_dir / "accuracy_vs_k.csv"
        k_cols = ["k", "method", "classifier", "mean_accuracy", "sd_accuracy"]
        rows = [
            {**row,
             "mean_accuracy": (row["mean_accuracy"] or 0.0) * 100.0,
             "sd_accuracy": (row["sd_accuracy"] or 0.0) * 100.0}
            for row in k_table
        ]
        k_path.write_bytes(_csv_bytes(rows, k_cols))
        written["accuracy_vs_k"] = k_path
    return written
