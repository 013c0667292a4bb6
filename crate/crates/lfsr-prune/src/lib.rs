//! Prune fully-connected networks with LFSR-generated masks, store the
//! surviving weights without index arrays, and measure what that buys in
//! memory footprint and access energy.
//!
//! The pieces compose in pipeline order:
//!
//! * [`lfsr`] steps maximal-length shift registers and maps their states to
//!   matrix indices.
//! * [`mask`] pairs two registers to draw reproducible sparsity patterns and
//!   checks the linear-algebra health of masked matrices.
//! * [`data`], [`net`], and [`train`] cover datasets, the multilayer
//!   perceptron, and the train / regularize / prune / retrain loop.
//! * [`codec`] packs pruned layers into the seed-carrying sparse format and
//!   into a value/index/pointer baseline for comparison.
//! * [`kernels`] runs matrix-vector products over every storage format while
//!   counting memory traffic; [`cost`] turns those counts into energy.
//! * [`container`] reads and writes the `LFSP` model file, and [`sweep`]
//!   drives whole experiment grids.

pub(crate) mod bitset;
pub mod codec;
pub mod container;
pub mod cost;
pub mod data;
pub mod kernels;
pub mod lfsr;
pub mod mask;
pub mod matrix;
pub mod net;
pub mod sweep;
pub mod train;

pub use codec::{
    decode_baseline, decode_lfsr, encode_baseline, encode_lfsr, footprint, BaselineCompressed,
    CodecError, FootprintReport, LfsrSparseLayer, ValueStore,
};
pub use container::{ContainerError, DenseLayer, ModelContainer, StoredLayer};
pub use cost::{
    breakdown, compare, energy, savings_grid, CostError, CostReport, CostTable, EnergyBreakdown,
    GridCell, SavingsGrid, GRID_CSV_HEADER,
};
pub use data::{Dataset, Split};
pub use kernels::{
    baseline_sparse_matvec, baseline_sparse_matvec_int, dense_matvec, dense_matvec_int,
    lfsr_sparse_matvec, lfsr_sparse_matvec_int, quantize_vec, AccessTrace, KernelError,
    QuantizedVec, TRACE_CSV_HEADER,
};
pub use lfsr::{Lfsr, LfsrError, LfsrSpec};
pub use mask::{Mask, MaskError, MaskStats};
pub use matrix::Matrix;
pub use net::{evaluate, Layer, Model, NetError};
pub use sweep::{
    load_dataset, run_sweep, DataSource, ExperimentConfig, PointOutcome, PointParams, SweepError,
    SweepSummary, FOOTPRINT_CSV_HEADER, SUMMARY_CSV_HEADER,
};
pub use train::{
    magnitude_prune_baseline, regularize_and_prune, retrain_pinned, run_pipeline, train_dense,
    EpochRow, MagnitudeReport, Phase, PipelineReport, RegKind, TrainConfig, TrainError,
};
