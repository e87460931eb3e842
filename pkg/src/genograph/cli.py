"""Command-line interface."""
from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import sequence_io as sio
from .debruijn import build_graph_set, read_graphs_jsonl, write_graphs_jsonl
from .kernels import (
    KernelConfig,
    ProductTooLarge,
    kernel_matrix,
    write_kernel_matrix,
)
from .embed import (
    EmbeddingConfig,
    GraphEmbedding,
    Graph2VecEmbedder,
    Node2VecEmbedder,
    read_embedding,
    write_embedding,
)
from .baselines import (
    LogisticRegressionClassifier,
    SmoSvmClassifier,
    kmeans2,
    save_model_json,
)
from .deepnet import LossConfig, MultiTaskClassifier, TrainSchedule
from .pipeline import (
    ExperimentConfig,
    ExperimentSession,
    ablate_k as run_ablate_k,
    ablate_objective as run_ablate_objective,
    emit_report,
    paired_deltas,
    run_cv,
)


@click.group()
def main():
    """Genome-read classification toolkit."""


@main.command()
@click.option("--ref", type=click.Path(exists=True), default=None,
              help="FASTA with a host record then a pathogen record; bundled "
                   "synthetic references are used when omitted.")
@click.option("--per-class", type=int, default=500, show_default=True)
@click.option("--read-length", type=int, default=150, show_default=True)
@click.option("--q-min", type=int, default=28, show_default=True)
@click.option("--q-max", type=int, default=35, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True, help="Output directory.")
def simulate(ref, per_class, read_length, q_min, q_max, seed, out):
    """Simulate a balanced labeled read set and write FASTA + manifest."""
    host_ref = pathogen_ref = None
    if ref:
        records = sio.parse_fasta(Path(ref))
        if len(records) < 2:
            raise click.ClickException("--ref must contain two records (host, pathogen)")
        host_ref = sio.Read(records[0].id, records[0].bases, label=sio.HOST)
        pathogen_ref = sio.Read(records[1].id, records[1].bases, label=sio.PATHOGEN)
    cfg = sio.SimulationConfig(
        read_length=read_length, q_min=q_min, q_max=q_max,
        reads_per_class=per_class, rng_seed=seed,
    )
    dataset = sio.simulate_dataset(cfg, host_ref, pathogen_ref)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    sio.write_fasta(dataset.reads, out_dir / "reads.fasta")
    sio.write_manifest(dataset, per_class, seed, out_dir / "manifest.json")
    click.echo(f"wrote {len(dataset.reads)} reads to {out_dir}")


def _load_labeled_reads(in_path: str, manifest: str):
    path = Path(in_path)
    if path.is_dir():
        manifest = manifest or str(path / "manifest.json")
        path = path / "reads.fasta"
    reads = sio.parse_fasta(path)
    if manifest:
        info = sio.read_manifest(manifest)
        labels = dict(zip(info["read_ids"], info["labels"]))
        reads = [sio.Read(r.id, r.bases, label=labels.get(r.id, sio.HOST)) for r in reads]
    return reads


@main.command("build-graphs")
@click.option("--in", "in_path", type=click.Path(exists=True), required=True,
              help="FASTA file or a simulate output directory.")
@click.option("--manifest", type=click.Path(exists=True), default=None,
              help="Manifest JSON with labels (inferred for directories).")
@click.option("--k", type=int, required=True)
@click.option("--out", type=click.Path(), required=True)
def build_graphs(in_path, manifest, k, out):
    """Build per-read De Bruijn graphs as JSON Lines."""
    reads = _load_labeled_reads(in_path, manifest)
    graph_set = build_graph_set(reads, k)
    write_graphs_jsonl(graph_set, out)
    click.echo(f"wrote {len(graph_set.graphs)} graphs (k={k}) to {out}")


@main.command()
@click.option("--graphs", type=click.Path(exists=True), required=True)
@click.option("--kind", type=click.Choice(["spk", "wlk", "gsk", "rwk"]), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--no-normalize", is_flag=True, default=False)
@click.option("--out", type=click.Path(), required=True)
def kernel(graphs, kind, seed, no_normalize, out):
    """Compute a pairwise kernel matrix over a graph set."""
    graph_set = read_graphs_jsonl(graphs)
    cfg = KernelConfig()
    try:
        km = kernel_matrix(graph_set, kind, cfg, seed=seed, normalized=not no_normalize)
    except ProductTooLarge as exc:
        click.echo(json.dumps(exc.report()))
        sys.exit(2)
    write_kernel_matrix(km, out, cfg, seed)
    click.echo(f"wrote {km.m}x{km.m} {kind} matrix to {out}")


@main.command()
@click.option("--graphs", type=click.Path(exists=True), required=True)
@click.option("--method", type=click.Choice(["node2vec", "graph2vec"]), required=True)
@click.option("--dim", type=int, default=128, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def embed(graphs, method, dim, seed, out):
    """Embed every graph into a d-dimensional vector."""
    graph_set = read_graphs_jsonl(graphs)
    cfg = EmbeddingConfig(dim=dim, seed=seed)
    if method == "node2vec":
        vectors = Node2VecEmbedder(cfg).fit(graph_set).transform(graph_set)
    else:
        vectors = Graph2VecEmbedder(cfg).fit_transform(graph_set)
    write_embedding(GraphEmbedding(vectors, method, cfg), out)
    click.echo(f"wrote {vectors.shape[0]}x{vectors.shape[1]} {method} embedding to {out}")


@main.command("train-baseline")
@click.option("--features", type=click.Path(exists=True), required=True,
              help="Embedding file (.emb).")
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--model", type=click.Choice(["logreg", "svm", "kmeans"]), required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def train_baseline(features, manifest, model, seed, out):
    """Train a baseline model on embedded features."""
    emb = read_embedding(features)
    labels = sio.read_manifest(manifest)["labels"]
    if model == "kmeans":
        res = kmeans2(emb.vectors, labels, seed=seed)
        Path(out).write_text(json.dumps({
            "model": "kmeans",
            "accuracy": res.accuracy,
            "centroids": res.centroids.tolist(),
        }, sort_keys=True) + "\n")
        click.echo(f"kmeans accuracy {res.accuracy:.4f}")
        return
    clf = (LogisticRegressionClassifier() if model == "logreg"
           else SmoSvmClassifier(seed=seed))
    clf.fit(emb.vectors, labels)
    save_model_json(clf, out)
    acc = (clf.predict(emb.vectors) == np.asarray(labels)).mean()
    click.echo(f"{model} training accuracy {acc:.4f}")


@main.command("train-dl")
@click.option("--features", type=click.Path(exists=True), required=True)
@click.option("--manifest", type=click.Path(exists=True), required=True)
@click.option("--schedule", type=click.Choice(["small", "large"]), default="small",
              show_default=True)
@click.option("--variant", type=click.Choice(["multitask", "classifier_only", "no_decoder"]),
              default="multitask", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def train_dl(features, manifest, schedule, variant, seed, out):
    """Train the multi-task deep classifier on embedded features."""
    emb = read_embedding(features)
    labels = sio.read_manifest(manifest)["labels"]
    sched = TrainSchedule.small(seed) if schedule == "small" else TrainSchedule.large(seed)
    clf = MultiTaskClassifier(schedule=sched, loss_cfg=LossConfig(), variant=variant)
    clf.fit(emb.vectors, labels)
    clf.save(out)
    acc = (clf.predict(emb.vectors) == np.asarray(labels)).mean()
    click.echo(f"{variant} training accuracy {acc:.4f}; checkpoint at {out}")


@main.command()
@click.option("--config", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
def run(config, out):
    """Run the configured cross-validation experiment."""
    cfg = ExperimentConfig.from_file(config)
    result = run_cv(cfg)
    emit_report(result, out)
    if result.skipped:
        click.echo(f"skipped: {json.dumps(result.skip_reason)}")
    else:
        sd = result.reported_sd()
        sd_text = f" +- {sd * 100:.2f}" if sd is not None else ""
        click.echo(f"accuracy {result.mean_accuracy * 100:.2f}{sd_text}")


@main.command("ablate-k")
@click.option("--config", type=click.Path(exists=True), required=True)
@click.option("--k-values", default="2,3,4,5,6", show_default=True)
@click.option("--out", type=click.Path(), required=True)
def ablate_k(config, k_values, out):
    """Accuracy-vs-k table for node2vec and SPK."""
    cfg = ExperimentConfig.from_file(config)
    ks = [int(v) for v in k_values.split(",")]
    table = run_ablate_k(cfg, ks)
    emit_report([], Path(out), k_table=table)
    for row in table:
        click.echo(f"k={row['k']} {row['method']}: "
                   f"{(row['mean_accuracy'] or 0.0) * 100:.2f}")


@main.command("ablate-objective")
@click.option("--config", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
def ablate_objective(config, out):
    """Compare multitask (DL), NN, and no-decoder variants on shared folds."""
    cfg = ExperimentConfig.from_file(config)
    session = ExperimentSession(cfg)
    results = run_ablate_objective(cfg, session)
    emit_report(list(results.values()), out)
    deltas = paired_deltas(results)
    for kind, res in results.items():
        click.echo(f"{kind}: {res.mean_accuracy * 100:.2f}")
    click.echo(f"paired deltas vs DL: {json.dumps(deltas)}")


if __name__ == "__main__":
    main()
