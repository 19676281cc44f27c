//! Double/debiased machine-learning instrumental-variable estimation.
//!
//! The crate estimates a homogeneous treatment effect `beta` and a
//! kernel-smoothed heterogeneous effect `beta(v)` in the partially linear IV
//! model `Y = beta(V) D + g(X) + eps`, using the learned instrument
//! `E[D | Z, X]`. Every estimator is built from cross-fitted residuals
//! (see [`crossfit`]) and comes with a standard Wald interval and a
//! weak-instrument-robust confidence set obtained by inverting a score test.
//!
//! Module map:
//!
//! * [`data`]: samples, CSV ingestion, fold partitions.
//! * [`learners`]: OLS, additive spline ridge and boosted trees.
//! * [`crossfit`]: residuals `R_Y`, `R_D`, `R_f` (or `R_Z`).
//! * [`kernel`]: kernels, bandwidth rules, Gaussian quantiles.
//! * [`hom`] / [`het`]: point estimates, variances and confidence sets.
//! * [`aggregate`]: median aggregation over repeated cross-fitting.
//! * [`pipeline`]: end-to-end fits used by the CLI and the simulator.
//! * [`simulate`]: synthetic designs and Monte-Carlo experiments.

pub mod aggregate;
pub mod confidence;
pub mod crossfit;
pub mod data;
pub mod error;
pub mod het;
pub mod hom;
pub mod kernel;
pub mod learners;
pub mod pipeline;
pub mod rng;
pub mod simulate;
mod stats;

pub use nalgebra;

pub use aggregate::{aggregate_point, aggregate_q, AggregatedEstimate, AggregatedQ, VarianceCorrection};
pub use confidence::{ConfidenceSet, QCoefficients, Region};
pub use crossfit::{compute_residuals, compute_residuals_with, iv_strength, InstrumentMode, NuisanceLearners, NuisanceSpecs, ResidualSet};
pub use data::{load_csv, make_folds, ColumnRef, ColumnSchema, FoldPartition, Sample};
pub use error::{Error, Result};
pub use het::{estimate_curve, estimate_het, het_coefficients, robust_set_het, HetCurve, HetEstimate, HetPoint};
pub use hom::{estimate_hom, hom_coefficients, q_stat, robust_set_hom, standard_ci, HomEstimate, QStat};
pub use kernel::{bandwidth, check_kernel, gaussian_cdf, gaussian_quantile, BandwidthRule, Kernel, KernelReport};
pub use learners::{fit, predict, tune, FittedModel, Learner, LearnerSpec, Predictor};
pub use pipeline::{fit_het, fit_hom, FitConfig, HetConfig, HomFit, Inference};
pub use simulate::{generate, run_experiment, DgpSpec, ExperimentConfig, ExperimentReport, Method, Truth};
