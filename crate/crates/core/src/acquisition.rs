//! Closed-form acquisition functions for minimization under `c_i(x) < 0`
//! constraints.

use serde::{Deserialize, Serialize};

use crate::gp::PosteriorGaussian;

/// Posterior spreads below this are treated as deterministic.
pub const SIGMA_EPS: f64 = 1e-12;

/// Below this standardized improvement, EI switches to its asymptotic tail.
const TAIL_LAMBDA: f64 = -8.0;

/// Best feasible observation at one fidelity: its value and its index in
/// the corresponding dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub tau: f64,
    pub index: usize,
}

/// Objective and constraint posteriors at one design.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSet {
    pub objective: PosteriorGaussian,
    pub constraints: Vec<PosteriorGaussian>,
}

pub fn normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `lambda * Phi(lambda) + phi(lambda)` for `lambda < -8`, from the
/// asymptotic expansion `phi(lambda) * sum_k (-1)^k (2k+1)!! / lambda^(2k+2)`.
fn ei_tail(lambda: f64) -> f64 {
    let inv2 = 1.0 / (lambda * lambda);
    let mut term = inv2;
    let mut sum = 0.0;
    for k in 0..12 {
        sum += term;
        term *= -((2 * k + 3) as f64) * inv2;
    }
    normal_pdf(lambda) * sum
}

/// Expected improvement below the incumbent value `tau`.
///
/// Uses the deterministic limit `max(0, tau - mu)` when `sigma < 1e-12`.
pub fn expected_improvement(post: &PosteriorGaussian, tau: f64) -> f64 {
    let sigma = post.std_dev();
    if sigma < SIGMA_EPS {
        return (tau - post.mean).max(0.0);
    }
    let lambda = (tau - post.mean) / sigma;
    let scaled = if lambda < TAIL_LAMBDA {
        ei_tail(lambda)
    } else {
        lambda * normal_cdf(lambda) + normal_pdf(lambda)
    };
    (sigma * scaled).max(0.0)
}

/// `Phi(-mu / sigma)`: probability that the constraint value is negative.
pub fn probability_of_feasibility(post: &PosteriorGaussian) -> f64 {
    let sigma = post.std_dev();
    if sigma < SIGMA_EPS {
        return if post.mean < 0.0 {
            1.0
        } else if post.mean > 0.0 {
            0.0
        } else {
            0.5
        };
    }
    normal_cdf(-post.mean / sigma).clamp(0.0, 1.0)
}

/// EI times the product of per-constraint feasibility probabilities.
pub fn weighted_ei(ps: &PosteriorSet, tau: f64) -> f64 {
    ps.constraints
        .iter()
        .fold(expected_improvement(&ps.objective, tau), |acc, c| acc * probability_of_feasibility(c))
}

/// Sum of the positive parts of the constraint posterior means; zero exactly
/// when every mean is feasible.
pub fn first_feasible_score(ps: &PosteriorSet) -> f64 {
    ps.constraints.iter().map(|c| c.mean.max(0.0)).sum()
}
