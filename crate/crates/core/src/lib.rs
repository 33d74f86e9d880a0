//! Multivariate gradient-boosted trees with structured leaf responses
//! (smoothed, Fourier, hierarchical summation, linear) and relaxed quantile
//! losses, with forecast reconciliation and evaluation helpers.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases at the crate root fix it to `f64`.

// NaN-rejecting checks are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod boosting;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod lossresp;
pub mod metrics;
pub mod reconcile;
pub mod scalar;
pub mod tree;

pub use boosting::{BoostConfig, BoostedModel, FORMAT_VERSION};
pub use dataset::{CvSplit, Dataset, FeaturePipeline};
pub use error::{MbtError, Result};
pub use linalg::Matrix;
pub use lossresp::{LossKind, LossResponseSpec};
pub use reconcile::{Hierarchy, ReconcileModel};
pub use scalar::Scalar;
pub use tree::{Tree, TreeConfig};

pub type Matrix64 = linalg::Matrix<f64>;
pub type Dataset64 = dataset::Dataset<f64>;
pub type Spec64 = lossresp::LossResponseSpec<f64>;
pub type Config64 = boosting::BoostConfig<f64>;
pub type Model64 = boosting::BoostedModel<f64>;
pub type Tree64 = tree::Tree<f64>;
