//! Quantile-of-means estimation for regularized linear prediction.
//!
//! The sample is split into `K` disjoint blocks; the estimator minimizes the
//! `q`-th quantile of the per-block mean losses plus a penalty. `q = 0.5` is
//! the median-of-means estimator.

pub mod bounds;
pub mod datagen;
pub mod error;
pub mod harness;
pub mod io;
pub mod loss;
pub mod objective;
pub mod partition;
pub mod penalty;
pub mod solver;
pub mod types;

pub use error::{QomError, Result};
pub use loss::LossKind;
pub use objective::{QomObjective, QuantileSelection};
pub use partition::PartitionScheme;
pub use penalty::PenaltyKind;
pub use types::{
    min_blocks, validate_partition_assumption, ContaminationTags, Dataset, FitConfig, FitResult,
    QuantileSpec, ResponseKind, Sample, Tag, WeightVector,
};
