//! Box-bounded local minimizers: a projected L-BFGS for smooth objectives
//! with gradients (GP hyperparameters), and Nelder-Mead for the noisy,
//! derivative-free acquisition refinement.

mod lbfgs;
mod nelder_mead;

pub use lbfgs::{minimize_projected_lbfgs, LbfgsConfig, Minimum};
pub use nelder_mead::{minimize_nelder_mead, NelderMeadConfig};
