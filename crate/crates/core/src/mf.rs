//! Nonlinear two-fidelity Gaussian-process fusion.
//!
//! The high-fidelity response is modelled as `f_h(x) = z(f_l(x), x) + delta(x)`.
//! A GP over the augmented input `(x, mu_l(x))` with the composite kernel
//!
//! ```text
//! k_h(u1, u2) = k_out(m1, m2) * k_in(x1, x2) + k_disc(x1, x2)
//! ```
//!
//! (all three squared-exponential) captures both the nonlinear map `z` and
//! the independent discrepancy `delta`. Training augments the high-fidelity
//! inputs with the low-fidelity posterior mean; prediction integrates the
//! low-fidelity posterior out by Monte Carlo.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::gp::{fit_hyperparameters, Engine, FitConfig, FitReport, GpModel, ParamKind, PosteriorGaussian, TrainingSet};
use crate::kernel::{Covariance, SeKernel};

/// The two fidelity levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FidelityLevel {
    Low,
    High,
}

impl std::fmt::Display for FidelityLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FidelityLevel::Low => "low",
            FidelityLevel::High => "high",
        })
    }
}

/// Composite kernel over augmented inputs of dimension `d + 1`; the last
/// coordinate is the (standardized) low-fidelity output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfKernel {
    /// Over the low-fidelity output coordinate (1-d).
    pub output: SeKernel,
    /// Over `x`, multiplying `output`.
    pub input: SeKernel,
    /// Additive discrepancy over `x`.
    pub discrepancy: SeKernel,
}

impl MfKernel {
    pub fn isotropic(dim: usize, lengthscale: f64) -> Self {
        Self {
            output: SeKernel::isotropic(1, lengthscale),
            input: SeKernel::isotropic(dim, lengthscale),
            discrepancy: SeKernel::isotropic(dim, lengthscale),
        }
    }

    pub fn x_dim(&self) -> usize {
        self.input.input_dim()
    }
}

impl Covariance for MfKernel {
    fn input_dim(&self) -> usize {
        self.x_dim() + 1
    }

    fn n_params(&self) -> usize {
        self.output.n_params() + self.input.n_params() + self.discrepancy.n_params()
    }

    fn params(&self) -> Vec<f64> {
        let mut p = self.output.params();
        p.extend(self.input.params());
        p.extend(self.discrepancy.params());
        p
    }

    fn set_params(&mut self, params: &[f64]) {
        let a = self.output.n_params();
        let b = a + self.input.n_params();
        self.output.set_params(&params[..a]);
        self.input.set_params(&params[a..b]);
        self.discrepancy.set_params(&params[b..]);
    }

    #[inline]
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let d = self.x_dim();
        self.output.eval(&a[d..], &b[d..]) * self.input.eval(&a[..d], &b[..d]) + self.discrepancy.eval(&a[..d], &b[..d])
    }

    fn eval_with_grad(&self, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64 {
        let d = self.x_dim();
        let na = self.output.n_params();
        let nb = na + self.input.n_params();
        let (g_out, rest) = grad.split_at_mut(na);
        let (g_in, g_disc) = rest.split_at_mut(nb - na);
        let k_out = self.output.eval_with_grad(&a[d..], &b[d..], g_out);
        let k_in = self.input.eval_with_grad(&a[..d], &b[..d], g_in);
        let k_disc = self.discrepancy.eval_with_grad(&a[..d], &b[..d], g_disc);
        g_out.iter_mut().for_each(|g| *g *= k_in);
        g_in.iter_mut().for_each(|g| *g *= k_out);
        k_out * k_in + k_disc
    }

    fn diag(&self, _a: &[f64]) -> f64 {
        self.output.signal_variance() * self.input.signal_variance() + self.discrepancy.signal_variance()
    }
}

/// Hyperparameters of the high-fidelity GP: the composite kernel and its
/// own observation noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfHyperparameters {
    pub log_sigma_n: f64,
    pub kernel: MfKernel,
}

impl MfHyperparameters {
    /// Flat layout `[log_sigma_n, output.., input.., discrepancy..]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.log_sigma_n];
        v.extend(self.kernel.params());
        v
    }

    fn from_slice(dim: usize, v: &[f64]) -> Self {
        let mut kernel = MfKernel::isotropic(dim, 1.0);
        kernel.set_params(&v[1..]);
        Self {
            log_sigma_n: v[0],
            kernel,
        }
    }

    pub fn prior_default(dim: usize) -> Self {
        Self {
            log_sigma_n: 1e-3f64.ln(),
            kernel: MfKernel::isotropic(dim, 0.3),
        }
    }

    fn layout(dim: usize) -> Vec<ParamKind> {
        let mut layout = vec![ParamKind::Noise, ParamKind::SignalStd, ParamKind::Lengthscale];
        for _ in 0..2 {
            layout.push(ParamKind::SignalStd);
            layout.extend(std::iter::repeat_n(ParamKind::Lengthscale, dim));
        }
        layout
    }
}

/// Monte-Carlo settings for [`MfModel::predict`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_samples: 128,
            seed: 0,
        }
    }
}

/// Fused two-fidelity model.
#[derive(Clone, Debug)]
pub struct MfModel {
    low: GpModel,
    high_set: TrainingSet,
    theta: MfHyperparameters,
    engine: Engine<MfKernel>,
    report: Option<FitReport>,
}

/// `k_out(m1, m2) * k_in(x1, x2) + k_disc(x1, x2)` on augmented vectors.
pub fn kernel_mf(u1: &[f64], u2: &[f64], theta: &MfHyperparameters) -> Result<f64> {
    let d = theta.kernel.input_dim();
    check_dim(d, u1.len())?;
    check_dim(d, u2.len())?;
    Ok(theta.kernel.eval(u1, u2))
}

fn augment(low: &GpModel, inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    inputs
        .iter()
        .map(|x| {
            let (m, _) = low.predict_standardized(x).expect("dimension checked by caller");
            let mut u = x.clone();
            u.push(m);
            u
        })
        .collect()
}

impl MfModel {
    /// Conditions the high-fidelity GP on `high_data` with fixed hyperparameters.
    pub fn new(low: GpModel, high_data: &TrainingSet, theta: MfHyperparameters) -> Result<Self> {
        check_dim(low.dim(), high_data.dim())?;
        check_dim(low.dim(), theta.kernel.x_dim())?;
        let aug = augment(&low, high_data.inputs());
        let high_set = TrainingSet::with_standardizer(aug, high_data.targets().to_vec(), high_data.standardizer())?;
        let y = high_set.standardized_targets();
        let engine = Engine::new(theta.kernel.clone(), theta.log_sigma_n, high_set.inputs(), &y)?;
        Ok(Self {
            low,
            high_set,
            theta,
            engine,
            report: None,
        })
    }

    /// Fits the composite-kernel hyperparameters by multi-restart NLML
    /// minimization on the augmented high-fidelity data.
    pub fn fit(low: GpModel, high_data: &TrainingSet, cfg: &FitConfig) -> Result<Self> {
        check_dim(low.dim(), high_data.dim())?;
        let d = low.dim();
        let aug = augment(&low, high_data.inputs());
        let y = TrainingSet::with_standardizer(aug.clone(), high_data.targets().to_vec(), high_data.standardizer())?
            .standardized_targets();
        let template = MfKernel::isotropic(d, 1.0);
        let (params, report) = fit_hyperparameters(&template, &MfHyperparameters::layout(d), &aug, &y, cfg)?;
        let mut model = Self::new(low, high_data, MfHyperparameters::from_slice(d, &params))?;
        model.report = Some(report);
        Ok(model)
    }

    pub fn fit_or_default(low: GpModel, high_data: &TrainingSet, cfg: &FitConfig) -> Result<(Self, bool)> {
        match Self::fit(low.clone(), high_data, cfg) {
            Ok(m) => Ok((m, false)),
            Err(Error::FitFailed(msg)) => {
                log::warn!("fused model fit failed ({msg}); using default hyperparameters");
                let d = low.dim();
                Ok((Self::new(low, high_data, MfHyperparameters::prior_default(d))?, true))
            }
            Err(e) => Err(e),
        }
    }

    pub fn dim(&self) -> usize {
        self.low.dim()
    }

    pub fn low(&self) -> &GpModel {
        &self.low
    }

    pub fn theta(&self) -> &MfHyperparameters {
        &self.theta
    }

    /// Augmented training inputs `(x, mu_l(x))` and raw high-fidelity targets.
    pub fn high_set(&self) -> &TrainingSet {
        &self.high_set
    }

    pub fn nlml(&self) -> f64 {
        self.engine.nlml
    }

    pub fn fit_report(&self) -> Option<&FitReport> {
        self.report.as_ref()
    }

    /// High-fidelity GP posterior at the augmented input `(x, s)`, standardized
    /// scale, where `s` is a standardized low-fidelity output value.
    pub fn conditional(&self, x: &[f64], s: f64) -> Result<(f64, f64)> {
        check_dim(self.dim(), x.len())?;
        let mut u = x.to_vec();
        u.push(s);
        let mut kx: Vec<f64> = self.high_set.inputs().iter().map(|ui| self.engine.kernel.eval(&u, ui)).collect();
        let prior = self.engine.kernel.diag(&u);
        Ok(self.engine.posterior_from_cross(&mut kx, prior))
    }

    /// Monte-Carlo posterior at `x`.
    ///
    /// Draws `s_j ~ N(mu_l(x), sigma_l^2(x))` on the low model's standardized
    /// scale in antithetic pairs, pushes each through the high GP, and combines the conditional
    /// moments by the law of total variance. Deterministic in `mc.seed`.
    pub fn predict(&self, x: &[f64], mc: &McConfig) -> Result<PosteriorGaussian> {
        check_dim(self.dim(), x.len())?;
        if mc.n_samples == 0 {
            return Err(Error::Contract("n_samples must be at least 1".into()));
        }
        Ok(self.predict_unchecked(x, mc))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64], mc: &McConfig) -> PosteriorGaussian {
        let (mu_l, var_l) = self.low.predict_standardized(x).expect("dimension checked");
        let sd_l = var_l.sqrt();
        let kernel = &self.engine.kernel;
        let d = self.dim();
        let inputs = self.high_set.inputs();
        let k_in: Vec<f64> = inputs.iter().map(|u| kernel.input.eval(x, &u[..d])).collect();
        let k_disc: Vec<f64> = inputs.iter().map(|u| kernel.discrepancy.eval(x, &u[..d])).collect();
        let prior = kernel.diag(x);

        let mut kx = vec![0.0; inputs.len()];
        let (mut mean_acc, mut m2_acc, mut var_acc) = (0.0, 0.0, 0.0);
        for (j, z) in antithetic_normals(mc.seed, mc.n_samples).into_iter().enumerate() {
            let s = [mu_l + sd_l * z];
            for (i, u) in inputs.iter().enumerate() {
                kx[i] = kernel.output.eval(&s, &u[d..]) * k_in[i] + k_disc[i];
            }
            let (m, v) = self.engine.posterior_from_cross(&mut kx, prior);
            let k = (j + 1) as f64;
            let delta = m - mean_acc;
            mean_acc += delta / k;
            m2_acc += delta * (m - mean_acc);
            var_acc += (v - var_acc) / k;
        }
        let var_std = var_acc + m2_acc / mc.n_samples as f64;
        let s = self.high_set.standardizer();
        PosteriorGaussian {
            mean: s.invert(mean_acc),
            variance: s.invert_variance(var_std),
            variance_std: var_std,
        }
    }
}

/// `n` standard normal draws from a seeded stream, in antithetic pairs
/// `(z, -z)`. An odd `n` leaves the last draw unpaired.
pub fn antithetic_normals(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let z: f64 = StandardNormal.sample(&mut rng);
        out.push(z);
        if out.len() < n {
            out.push(-z);
        }
    }
    out
}

pub fn fit_mf(low: GpModel, high_data: &TrainingSet, cfg: &FitConfig) -> Result<MfModel> {
    MfModel::fit(low, high_data, cfg)
}

pub fn predict_mf(model: &MfModel, x: &[f64], mc: &McConfig) -> Result<PosteriorGaussian> {
    model.predict(x, mc)
}
