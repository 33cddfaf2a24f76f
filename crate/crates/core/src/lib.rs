//! Quasi-Bayesian recursive copula predictive densities.
//!
//! The predictive density of a new observation is updated one training point at a
//! time with a bivariate Gaussian copula factor, starting from a standard normal
//! initial predictive. The copula correlation (the *bandwidth*) is either a
//! constant, a per-dimension constant, or a data-dependent function of the
//! already-visited coordinates (RBF / rational-quadratic kernels or a masked
//! autoregressive network). Bandwidth parameters are tuned by maximising the
//! prequential log-likelihood with Adam, using reverse-mode differentiation of
//! the full recursion.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, the command line
//! and the benchmark harness live in the companion `arbp` crate.
//!
//! Module map:
//!
//! * [`math`]: normal CDF/quantile, Gaussian copula density and conditional CDF,
//!   the update weight sequence.
//! * [`bandwidth`]: bandwidth parameterizations and their unconstrained transforms.
//! * [`engine`]: the joint density and conditional-CDF recursion, fitting,
//!   evaluation and permutation averaging.
//! * [`train`]: the prequential objective, its gradient and the Adam loop.
//! * [`supervised`]: conditional regression and binary classification updates.
//! * [`sampling`]: inverse-CDF, importance and sequential Monte Carlo sampling.
//! * [`data`]: standardization and column pruning.
//! * [`kde`]: the cross-validated Gaussian KDE baseline.
#![no_std]

extern crate alloc;

pub mod ad;
pub mod bandwidth;
pub mod data;
pub mod engine;
mod error;
pub mod kde;
pub mod math;
pub mod sampling;
pub mod supervised;
pub mod train;

pub use data::{preprocess, DropReason, DroppedColumn, Standardization, StandardizedDataset};
pub use bandwidth::{ArNetWeights, BandwidthModel, BandwidthShape, KernelKind, ModelKind, Rho0};
pub use engine::{
    eval_log_density, fit, fit_matrix, prequential_nll, Evaluator, FeatureOrder, FitConfig,
    FittedDensityModel, InitialDensity, PermutationPair, QueryState,
};
pub use error::{Error, Result};
pub use math::{Correlation, UnitInterval};
pub use sampling::{ParticleSet, SmcConfig, SmcPooling};
pub use supervised::{SupervisedConfig, SupervisedModel, Task};
pub use train::{optimize, AdamState, Objective, OptimizerConfig};
