"""Python access to the temporal knowledge graph transfer library."""

from ._mpkd import (
    Error,
    cosine,
    load_checkpoint,
    nce_decay,
    rank_of,
    run_experiment,
    set_num_threads,
    softmax_masked,
    solve_assignment,
    summarize_ranks,
    synthetic_pair,
    temporal_integrate,
    transfer_ratio,
)

__all__ = [
    "Error",
    "cosine",
    "load_checkpoint",
    "nce_decay",
    "rank_of",
    "run_experiment",
    "set_num_threads",
    "softmax_masked",
    "solve_assignment",
    "summarize_ranks",
    "synthetic_pair",
    "temporal_integrate",
    "transfer_ratio",
]
