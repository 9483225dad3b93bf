"""Random forest with serial, multicore, SPMD and hybrid engines.

The heavy lifting lives in the C++ extension; this package re-exports it.
"""

from ._rfspmd import (
    BenchRecord,
    DecodeError,
    Error,
    InvalidArgument,
    ProtocolError,
    RngStream,
    bench_sweep,
    block_indices,
    chunk_sizes,
    collective_demo,
    gini_impurity,
    run,
    synth_dataset,
    train_test_split,
)

__all__ = [
    "BenchRecord",
    "DecodeError",
    "Error",
    "InvalidArgument",
    "ProtocolError",
    "RngStream",
    "bench_sweep",
    "block_indices",
    "chunk_sizes",
    "collective_demo",
    "gini_impurity",
    "run",
    "synth_dataset",
    "train_test_split",
]
