"""Balanced codebook clustering, cluster-oriented losses, and sampling
transforms for discrete-token generation pipelines."""

from .codebook import (
    Codebook,
    CodebookFormatError,
    code_distance,
    load_codebook,
    lookup,
    neighbors_within_rank,
    quantize,
    save_codebook,
)
from .clustering import (
    BalancedKMeans,
    ClusterAssignment,
    ClusterStats,
    adjacency_cost,
    balanced_kmeans,
    hamiltonian_oracle,
    intra_cluster_stats,
    load_assignment,
    save_assignment,
)
from .losses import (
    LossBreakdown,
    cluster_ce,
    cluster_probs,
    combined_loss,
    combined_loss_grad,
    finite_diff_check,
    softmax,
    token_ce,
)
from .rearrange import (
    CodebookRearranger,
    PermutationMap,
    apply_permutation,
    build_permutation,
    cluster_label,
    load_permutation,
    load_tokens,
    remap_tokens,
    save_permutation,
    save_tokens,
)
from .sampling import (
    SamplerConfig,
    apply_temperature,
    cfg_combine,
    sample_categorical,
    sample_next_token,
    top_k_filter,
    top_p_filter,
)
from .toytrain import (
    SyntheticDatasetConfig,
    TinyARModel,
    TokenSequence,
    ToyExperimentReport,
    evaluate_accuracy,
    gen_synthetic_dataset,
    model_forward,
    run_experiment,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BalancedKMeans",
    "ClusterAssignment",
    "ClusterStats",
    "Codebook",
    "CodebookFormatError",
    "CodebookRearranger",
    "LossBreakdown",
    "PermutationMap",
    "SamplerConfig",
    "SyntheticDatasetConfig",
    "TinyARModel",
    "TokenSequence",
    "ToyExperimentReport",
    "adjacency_cost",
    "apply_permutation",
    "apply_temperature",
    "balanced_kmeans",
    "build_permutation",
    "cfg_combine",
    "cluster_ce",
    "cluster_label",
    "cluster_probs",
    "code_distance",
    "combined_loss",
    "combined_loss_grad",
    "evaluate_accuracy",
    "finite_diff_check",
    "gen_synthetic_dataset",
    "hamiltonian_oracle",
    "intra_cluster_stats",
    "load_assignment",
    "load_codebook",
    "load_permutation",
    "load_tokens",
    "lookup",
    "model_forward",
    "neighbors_within_rank",
    "quantize",
    "remap_tokens",
    "run_experiment",
    "sample_categorical",
    "sample_next_token",
    "save_assignment",
    "save_codebook",
    "save_permutation",
    "save_tokens",
    "softmax",
    "token_ce",
    "top_k_filter",
    "top_p_filter",
    "train",
]
