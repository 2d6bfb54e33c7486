//! Covariance functions.
//!
//! Every kernel is parameterized by the logarithms of its positive
//! parameters, so unconstrained (or box-bounded) optimizers can move freely.

use serde::{Deserialize, Serialize};

/// A covariance function with a flat log-parameter vector.
///
/// Observation noise is not part of the kernel; the GP engine owns it.
pub trait Covariance {
    fn input_dim(&self) -> usize;

    fn n_params(&self) -> usize;

    fn params(&self) -> Vec<f64>;

    fn set_params(&mut self, params: &[f64]);

    fn eval(&self, a: &[f64], b: &[f64]) -> f64;

    /// Evaluates the kernel and writes `d k / d param_j` into `grad`.
    fn eval_with_grad(&self, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64;

    /// `k(x, x)`, the prior variance of the latent function.
    fn diag(&self, a: &[f64]) -> f64 {
        self.eval(a, a)
    }
}

/// Squared-exponential kernel with one lengthscale per input dimension:
/// `sigma_f^2 * exp(-0.5 * sum_i ((a_i - b_i) / l_i)^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeKernel {
    pub log_sigma_f: f64,
    pub log_lengthscales: Vec<f64>,
}

impl SeKernel {
    pub fn new(sigma_f: f64, lengthscales: &[f64]) -> Self {
        Self {
            log_sigma_f: sigma_f.ln(),
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
        }
    }

    /// Unit signal variance and a shared lengthscale.
    pub fn isotropic(dim: usize, lengthscale: f64) -> Self {
        Self::new(1.0, &vec![lengthscale; dim])
    }

    pub fn sigma_f(&self) -> f64 {
        self.log_sigma_f.exp()
    }

    pub fn lengthscales(&self) -> Vec<f64> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    pub fn signal_variance(&self) -> f64 {
        (2.0 * self.log_sigma_f).exp()
    }

    #[inline]
    fn scaled_sq_dist(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.log_lengthscales)
            .map(|((x, y), ll)| {
                let r = (x - y) * (-ll).exp();
                r * r
            })
            .sum()
    }
}

impl Covariance for SeKernel {
    fn input_dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    fn n_params(&self) -> usize {
        1 + self.log_lengthscales.len()
    }

    fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.n_params());
        p.push(self.log_sigma_f);
        p.extend_from_slice(&self.log_lengthscales);
        p
    }

    fn set_params(&mut self, params: &[f64]) {
        self.log_sigma_f = params[0];
        self.log_lengthscales.copy_from_slice(&params[1..]);
    }

    #[inline]
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        self.signal_variance() * (-0.5 * self.scaled_sq_dist(a, b)).exp()
    }

    fn eval_with_grad(&self, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64 {
        let k = self.eval(a, b);
        grad[0] = 2.0 * k;
        for (i, ll) in self.log_lengthscales.iter().enumerate() {
            let r = (a[i] - b[i]) * (-ll).exp();
            grad[1 + i] = k * r * r;
        }
        k
    }

    fn diag(&self, _a: &[f64]) -> f64 {
        self.signal_variance()
    }
}
