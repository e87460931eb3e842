"""Genome-read classification with De Bruijn graphs, graph embeddings,
and a multi-task deep classifier."""

from .sequence_io import (
    Read,
    SimulationConfig,
    Dataset,
    parse_fasta,
    write_fasta,
    simulate_reads,
    simulate_dataset,
    sample_balanced,
    synthetic_reference,
)
from .debruijn import (
    KmerSequence,
    DeBruijnGraph,
    GraphSet,
    extract_kmers,
    build_debruijn,
    build_graph_set,
    kmer_frequency_vector,
    KmerFrequencyVectorizer,
    graph_stats,
)
from .kernels import (
    KernelConfig,
    KernelMatrix,
    ProductTooLarge,
    GraphKernelTransformer,
    shortest_path_kernel,
    wl_kernel,
    graphlet_kernel,
    random_walk_kernel,
    kernel_matrix,
)
from .embed import (
    EmbeddingConfig,
    GraphEmbedding,
    Walk,
    biased_walks,
    skipgram_train,
    Node2VecEmbedder,
    Graph2VecEmbedder,
    node2vec_graph_embedding,
    graph2vec_embedding,
    wl_relabel_corpus,
)
from .baselines import (
    kmeans2,
    LogisticRegressionClassifier,
    SmoSvmClassifier,
    svm_fit,
    svm_predict,
)
from .deepnet import (
    LossConfig,
    TrainSchedule,
    MultiTaskNetwork,
    MultiTaskClassifier,
    multitask_loss,
)
from .pipeline import (
    ExperimentConfig,
    ExperimentSession,
    run_cv,
    ablate_k,
    ablate_objective,
    emit_report,
    derive_seed,
)

__version__ = "0.1.0"
