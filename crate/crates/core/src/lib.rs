//! Kernel support vector machines with k-piece piecewise-linear losses.

// `!(x > 0.0)` is used on purpose: it is also true for NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod kernel;
pub mod loss;
pub mod model_file;
pub mod modelsel;
pub mod qp;
pub mod trainer;

pub use data::{Dataset, DataError, Format, LabelMap, LoadOptions, NormalizationTransform};
pub use kernel::{Kernel, KernelError, RbfForm};
pub use loss::{AffinePiece, LossError, LossPropertyReport, LossSpec};
pub use qp::{solve, KktResiduals, QpError, QpProblem, QpSolution, SolveStatus, SolverOptions};
pub use modelsel::{
    benchmark_run, evaluate, staged_search, BenchMode, BenchOptions, BenchmarkReport, Criterion, Family, GridSearchReport,
    GridSpec, KernelKind, ModelSelError, SearchOptions,
};
pub use model_file::{ModelFile, ModelFileError};
pub use trainer::{fit, fit_normalized, train, KktReport, TrainError, TrainParams, TrainedModel, TrainingRun};
