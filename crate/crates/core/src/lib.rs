//! Constrained multi-fidelity Bayesian optimization.
//!
//! Cheap low-fidelity and expensive high-fidelity evaluations of the same
//! black box are fused by a two-level Gaussian-process model: a plain GP on
//! the low-fidelity data, and a high-fidelity GP whose inputs are augmented
//! with the low-fidelity posterior mean so that the map between the two
//! levels can be nonlinear. Low-fidelity uncertainty is propagated into
//! high-fidelity predictions by Monte-Carlo integration.
//!
//! The optimizer maximizes a feasibility-weighted expected improvement with a
//! multiple-starting-point search, and picks the evaluation fidelity from the
//! low-fidelity posterior variance.
//!
//! Module map:
//! - [`kernel`], [`gp`]: single-output GP regression.
//! - [`mf`]: the fused two-fidelity model.
//! - [`acquisition`]: EI, probability of feasibility, weighted EI, and the
//!   first-feasible score.
//! - [`optimizer`]: the full optimization loop and its state.
//! - [`problems`]: built-in benchmarks and the external evaluator client.
//! - [`optim`]: the numerical minimizers used internally.

pub mod acquisition;
pub mod error;
pub mod gp;
pub mod kernel;
pub mod mf;
pub mod optim;
pub mod optimizer;
pub mod problems;
pub mod space;

mod linalg;
mod serde_nan;

pub use error::{Error, Result};
pub use gp::{FitConfig, GpModel, Hyperparameters, PosteriorGaussian, Standardizer, TrainingSet};
pub use kernel::SeKernel;
pub use mf::{McConfig, MfHyperparameters, MfModel};
pub use problems::{EvaluationRecord, FidelityLevel, ProblemSpec};
pub use space::Bounds;
