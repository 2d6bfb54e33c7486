//! Single-output Gaussian-process regression.
//!
//! Inputs are expected in the unit box; targets are standardized per model
//! to zero mean and unit variance, and all posterior algebra runs on the
//! standardized scale with a zero prior mean. [`PosteriorGaussian`] reports
//! both scales.
//!
//! Hyperparameters are fitted by minimizing the negative log marginal
//! likelihood with a multi-restart, box-bounded L-BFGS over log-parameters.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernel::{Covariance, SeKernel};
use crate::linalg::{cholesky_inverse, cholesky_solve, cholesky_with_jitter, forward_substitute};
use crate::optim::{minimize_projected_lbfgs, LbfgsConfig};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// GP hyperparameters in log space: noise std, signal std, lengthscales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub log_sigma_n: f64,
    pub log_sigma_f: f64,
    pub log_lengthscales: Vec<f64>,
}

impl Hyperparameters {
    pub fn new(sigma_n: f64, sigma_f: f64, lengthscales: &[f64]) -> Self {
        Self {
            log_sigma_n: sigma_n.ln(),
            log_sigma_f: sigma_f.ln(),
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
        }
    }

    /// The all-ones point: unit noise, signal and lengthscales.
    pub fn ones(dim: usize) -> Self {
        Self::new(1.0, 1.0, &vec![1.0; dim])
    }

    /// Fallback used when a fit fails outright.
    pub fn prior_default(dim: usize) -> Self {
        Self::new(1e-3, 1.0, &vec![0.3; dim])
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn kernel(&self) -> SeKernel {
        SeKernel {
            log_sigma_f: self.log_sigma_f,
            log_lengthscales: self.log_lengthscales.clone(),
        }
    }

    pub fn noise_variance(&self) -> f64 {
        (2.0 * self.log_sigma_n).exp()
    }

    /// Flat layout `[log_sigma_n, log_sigma_f, log_l_1, ..., log_l_d]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.log_sigma_n, self.log_sigma_f];
        v.extend_from_slice(&self.log_lengthscales);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() < 3 {
            return Err(Error::Contract(format!(
                "hyperparameter vector needs at least 3 entries, got {}",
                v.len()
            )));
        }
        Ok(Self {
            log_sigma_n: v[0],
            log_sigma_f: v[1],
            log_lengthscales: v[2..].to_vec(),
        })
    }

    fn validate(&self, dim: usize) -> Result<()> {
        check_dim(dim, self.dim())?;
        if self.to_vec().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Contract("hyperparameters must be finite".into()))
        }
    }
}

/// Affine target transform `(y - mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    /// Below this spread the targets are treated as constant and `std = 1`.
    pub const MIN_STD: f64 = 1e-12;

    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    pub fn fit(targets: &[f64]) -> Self {
        let n = targets.len() as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std: if std < Self::MIN_STD { 1.0 } else { std },
        }
    }

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }

    pub fn invert_variance(&self, v: f64) -> f64 {
        v * self.std * self.std
    }
}

/// Observations `{X, y}` with the target transform that will be applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    standardizer: Standardizer,
}

impl TrainingSet {
    /// Builds a training set with targets standardized from the data.
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        let standardizer = if targets.is_empty() {
            Standardizer::identity()
        } else {
            Standardizer::fit(&targets)
        };
        Self::with_standardizer(inputs, targets, standardizer)
    }

    /// Builds a training set whose targets are used as given.
    pub fn unstandardized(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self> {
        Self::with_standardizer(inputs, targets, Standardizer::identity())
    }

    pub fn with_standardizer(inputs: Vec<Vec<f64>>, targets: Vec<f64>, standardizer: Standardizer) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Contract("training set must contain at least one point".into()));
        }
        check_dim(inputs.len(), targets.len())?;
        let d = inputs[0].len();
        if d == 0 {
            return Err(Error::Contract("inputs must have at least one coordinate".into()));
        }
        for x in &inputs {
            check_dim(d, x.len())?;
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Contract("training inputs must be finite".into()));
            }
        }
        if targets.iter().any(|y| !y.is_finite()) {
            return Err(Error::Contract("training targets must be finite".into()));
        }
        Ok(Self {
            inputs,
            targets,
            standardizer,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn standardizer(&self) -> Standardizer {
        self.standardizer
    }

    pub fn standardized_targets(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.targets.iter().map(|y| self.standardizer.apply(*y)))
    }
}

/// Gaussian predictive distribution at one input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGaussian {
    /// Mean in original target units.
    pub mean: f64,
    /// Variance in original target units squared.
    pub variance: f64,
    /// Variance on the standardized target scale.
    pub variance_std: f64,
}

impl PosteriorGaussian {
    pub fn std_dev(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

/// Ranges for each family of log-hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperBounds {
    pub log_sigma_n: (f64, f64),
    pub log_sigma_f: (f64, f64),
    pub log_lengthscale: (f64, f64),
}

impl HyperBounds {
    /// Box searched by the optimizer.
    pub fn search_default() -> Self {
        Self {
            log_sigma_n: (1e-6f64.ln(), 0.0),
            log_sigma_f: (1e-3f64.ln(), 1e3f64.ln()),
            log_lengthscale: (1e-3f64.ln(), 1e2f64.ln()),
        }
    }

    /// Box that random restarts are drawn from.
    pub fn init_default() -> Self {
        Self {
            log_sigma_n: (1e-4f64.ln(), 1e-1f64.ln()),
            log_sigma_f: (0.5f64.ln(), 2.0f64.ln()),
            log_lengthscale: (0.05f64.ln(), 1.0f64.ln()),
        }
    }

    pub(crate) fn range(&self, kind: ParamKind) -> (f64, f64) {
        match kind {
            ParamKind::Noise => self.log_sigma_n,
            ParamKind::SignalStd => self.log_sigma_f,
            ParamKind::Lengthscale => self.log_lengthscale,
        }
    }
}

/// Settings for hyperparameter fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Number of optimizer starts; the first is the centre of `init`.
    pub n_restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
    pub bounds: HyperBounds,
    pub init: HyperBounds,
    /// Pins the log noise std instead of fitting it.
    pub fixed_log_sigma_n: Option<f64>,
    /// Extra start in the model's flat parameter layout (tried first).
    pub warm_start: Option<Vec<f64>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_restarts: 5,
            max_iters: 100,
            seed: 0,
            bounds: HyperBounds::search_default(),
            init: HyperBounds::init_default(),
            fixed_log_sigma_n: None,
            warm_start: None,
        }
    }
}

impl FitConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ParamKind {
    Noise,
    SignalStd,
    Lengthscale,
}

/// Per-restart record of a multi-start fit.
#[derive(Clone, Debug, PartialEq)]
pub struct RestartOutcome {
    pub start: Vec<f64>,
    pub initial_nlml: Option<f64>,
    pub final_nlml: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub restarts: Vec<RestartOutcome>,
    pub best_restart: usize,
    pub best_nlml: f64,
}

/// Factorized GP over an arbitrary covariance function.
#[derive(Clone, Debug)]
pub(crate) struct Engine<K> {
    pub kernel: K,
    pub log_sigma_n: f64,
    pub inputs: Vec<Vec<f64>>,
    pub chol: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub nlml: f64,
}

impl<K: Covariance> Engine<K> {
    pub fn new(kernel: K, log_sigma_n: f64, inputs: &[Vec<f64>], y: &DVector<f64>) -> Result<Self> {
        let (chol, alpha, nlml) = factorize(&kernel, log_sigma_n, inputs, y)?;
        Ok(Self {
            kernel,
            log_sigma_n,
            inputs: inputs.to_vec(),
            chol,
            alpha,
            nlml,
        })
    }

    pub fn noise_variance(&self) -> f64 {
        (2.0 * self.log_sigma_n).exp()
    }

    /// Standardized-scale posterior `(mean, variance)` from the cross-covariance
    /// vector `k(x, X)` (overwritten) and the prior variance `k(x, x)`.
    #[inline]
    pub fn posterior_from_cross(&self, kx: &mut [f64], prior_var: f64) -> (f64, f64) {
        let mean: f64 = kx.iter().zip(self.alpha.iter()).map(|(a, b)| a * b).sum();
        forward_substitute(&self.chol, kx);
        let explained: f64 = kx.iter().map(|v| v * v).sum();
        let var = (self.noise_variance() + prior_var - explained).max(0.0);
        (mean, var)
    }

    pub fn predict_std(&self, x: &[f64]) -> (f64, f64) {
        let mut kx: Vec<f64> = self.inputs.iter().map(|xi| self.kernel.eval(x, xi)).collect();
        let prior = self.kernel.diag(x);
        self.posterior_from_cross(&mut kx, prior)
    }
}

pub(crate) fn kernel_matrix<K: Covariance>(kernel: &K, inputs: &[Vec<f64>], noise_var: Option<f64>) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let v = kernel.eval(&inputs[i], &inputs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        if let Some(nv) = noise_var {
            k[(j, j)] += nv;
        }
    }
    k
}

fn factorize<K: Covariance>(
    kernel: &K,
    log_sigma_n: f64,
    inputs: &[Vec<f64>],
    y: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let noise_var = (2.0 * log_sigma_n).exp();
    let k = kernel_matrix(kernel, inputs, Some(noise_var));
    let (chol, _jitter) = cholesky_with_jitter(&k)?;
    let alpha = cholesky_solve(&chol, y);
    let log_det = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let n = inputs.len() as f64;
    let nlml = 0.5 * (y.dot(&alpha) + log_det + n * LN_2PI);
    Ok((chol, alpha, nlml))
}

/// NLML and its gradient in the flat layout `[log_sigma_n, kernel params...]`.
pub(crate) fn nlml_with_gradient<K: Covariance>(
    kernel: &K,
    log_sigma_n: f64,
    inputs: &[Vec<f64>],
    y: &DVector<f64>,
) -> Result<(f64, Vec<f64>)> {
    let (chol, alpha, nlml) = factorize(kernel, log_sigma_n, inputs, y)?;
    let n = inputs.len();
    let p = kernel.n_params();
    // W = K^{-1} - alpha alpha^T; dNLML/dtheta = 0.5 tr(W dK/dtheta).
    let mut w = cholesky_inverse(&chol);
    for j in 0..n {
        for i in 0..n {
            w[(i, j)] -= alpha[i] * alpha[j];
        }
    }
    let mut grad = vec![0.0; p + 1];
    grad[0] = (2.0 * log_sigma_n).exp() * w.trace();
    let mut dk = vec![0.0; p];
    for j in 0..n {
        for i in j..n {
            kernel.eval_with_grad(&inputs[i], &inputs[j], &mut dk);
            let weight = if i == j { 0.5 * w[(i, j)] } else { w[(i, j)] };
            for (g, d) in grad[1..].iter_mut().zip(&dk) {
                *g += weight * d;
            }
        }
    }
    Ok((nlml, grad))
}

pub(crate) fn build_starts(layout: &[ParamKind], cfg: &FitConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = Vec::with_capacity(cfg.n_restarts + 1);
    if let Some(w) = &cfg.warm_start {
        if w.len() == layout.len() {
            starts.push(w.clone());
        }
    }
    for r in 0..cfg.n_restarts.max(1) {
        let start: Vec<f64> = layout
            .iter()
            .map(|kind| {
                let (lo, hi) = cfg.init.range(*kind);
                if r == 0 {
                    0.5 * (lo + hi)
                } else {
                    rng.random_range(lo..=hi)
                }
            })
            .collect();
        starts.push(start);
    }
    if let Some(v) = cfg.fixed_log_sigma_n {
        for s in &mut starts {
            s[0] = v;
        }
    }
    starts
}

pub(crate) fn search_box(layout: &[ParamKind], cfg: &FitConfig) -> (Vec<f64>, Vec<f64>) {
    let mut lower: Vec<f64> = layout.iter().map(|k| cfg.bounds.range(*k).0).collect();
    let mut upper: Vec<f64> = layout.iter().map(|k| cfg.bounds.range(*k).1).collect();
    if let Some(v) = cfg.fixed_log_sigma_n {
        lower[0] = v;
        upper[0] = v;
    }
    (lower, upper)
}

/// Multi-start NLML minimization for any covariance function.
///
/// The lowest final NLML wins; exact ties go to the earliest restart.
pub(crate) fn fit_hyperparameters<K: Covariance + Clone>(
    template: &K,
    layout: &[ParamKind],
    inputs: &[Vec<f64>],
    y: &DVector<f64>,
    cfg: &FitConfig,
) -> Result<(Vec<f64>, FitReport)> {
    debug_assert_eq!(layout.len(), template.n_params() + 1);
    let (lower, upper) = search_box(layout, cfg);
    let starts = build_starts(layout, cfg);
    let lbfgs = LbfgsConfig {
        max_iters: cfg.max_iters,
        ..Default::default()
    };

    let objective = |p: &[f64]| {
        let mut k = template.clone();
        k.set_params(&p[1..]);
        nlml_with_gradient(&k, p[0], inputs, y).ok()
    };

    let mut restarts = Vec::with_capacity(starts.len());
    let mut best: Option<(usize, f64, Vec<f64>)> = None;
    for (idx, start) in starts.into_iter().enumerate() {
        let clipped: Vec<f64> = start
            .iter()
            .zip(lower.iter().zip(&upper))
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect();
        let initial_nlml = objective(&clipped).map(|(v, _)| v);
        let result = initial_nlml.and_then(|_| minimize_projected_lbfgs(objective, &clipped, &lower, &upper, &lbfgs));
        let final_nlml = result.as_ref().map(|m| m.value);
        if let Some(m) = result {
            if best.as_ref().is_none_or(|(_, v, _)| m.value < *v) {
                best = Some((idx, m.value, m.x));
            }
        }
        restarts.push(RestartOutcome {
            start,
            initial_nlml,
            final_nlml,
        });
    }

    let (best_restart, best_nlml, params) =
        best.ok_or_else(|| Error::FitFailed(format!("all {} restarts failed to factorize", restarts.len())))?;
    Ok((
        params,
        FitReport {
            restarts,
            best_restart,
            best_nlml,
        },
    ))
}

/// A trained GP: data, hyperparameters, and the cached factorization.
#[derive(Clone, Debug)]
pub struct GpModel {
    training_set: TrainingSet,
    theta: Hyperparameters,
    engine: Engine<SeKernel>,
    report: Option<FitReport>,
}

impl GpModel {
    /// Conditions a GP with fixed hyperparameters on `ts`.
    pub fn new(ts: TrainingSet, theta: Hyperparameters) -> Result<Self> {
        theta.validate(ts.dim())?;
        let y = ts.standardized_targets();
        let engine = Engine::new(theta.kernel(), theta.log_sigma_n, ts.inputs(), &y)?;
        Ok(Self {
            training_set: ts,
            theta,
            engine,
            report: None,
        })
    }

    /// Fits hyperparameters by multi-restart NLML minimization.
    pub fn fit(ts: TrainingSet, cfg: &FitConfig) -> Result<Self> {
        let d = ts.dim();
        let mut layout = vec![ParamKind::Noise, ParamKind::SignalStd];
        layout.extend(std::iter::repeat_n(ParamKind::Lengthscale, d));
        let y = ts.standardized_targets();
        let template = SeKernel::isotropic(d, 1.0);
        let (params, report) = fit_hyperparameters(&template, &layout, ts.inputs(), &y, cfg)?;
        let mut model = Self::new(ts, Hyperparameters::from_slice(&params)?)?;
        model.report = Some(report);
        Ok(model)
    }

    /// Fits, falling back to [`Hyperparameters::prior_default`] when every restart fails.
    pub fn fit_or_default(ts: TrainingSet, cfg: &FitConfig) -> Result<(Self, bool)> {
        match Self::fit(ts.clone(), cfg) {
            Ok(m) => Ok((m, false)),
            Err(Error::FitFailed(msg)) => {
                log::warn!("GP fit failed ({msg}); using default hyperparameters");
                let d = ts.dim();
                Ok((Self::new(ts, Hyperparameters::prior_default(d))?, true))
            }
            Err(e) => Err(e),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<PosteriorGaussian> {
        check_dim(self.dim(), x.len())?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> PosteriorGaussian {
        let (m, v) = self.engine.predict_std(x);
        let s = self.training_set.standardizer();
        PosteriorGaussian {
            mean: s.invert(m),
            variance: s.invert_variance(v),
            variance_std: v,
        }
    }

    /// Standardized-scale `(mean, variance)`.
    pub fn predict_standardized(&self, x: &[f64]) -> Result<(f64, f64)> {
        check_dim(self.dim(), x.len())?;
        Ok(self.engine.predict_std(x))
    }

    pub fn dim(&self) -> usize {
        self.training_set.dim()
    }

    pub fn theta(&self) -> &Hyperparameters {
        &self.theta
    }

    pub fn training_set(&self) -> &TrainingSet {
        &self.training_set
    }

    /// Lower Cholesky factor of `K(X, X) + sigma_n^2 I` (plus any jitter).
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.engine.chol
    }

    /// `K^{-1} y` on standardized targets.
    pub fn alpha(&self) -> &DVector<f64> {
        &self.engine.alpha
    }

    pub fn nlml(&self) -> f64 {
        self.engine.nlml
    }

    pub fn fit_report(&self) -> Option<&FitReport> {
        self.report.as_ref()
    }
}

/// `sigma_f^2 exp(-0.5 (x1 - x2)^T Lambda^{-2} (x1 - x2))` for the kernel part of `theta`.
pub fn kernel_se(x1: &[f64], x2: &[f64], theta: &Hyperparameters) -> Result<f64> {
    check_dim(theta.dim(), x1.len())?;
    check_dim(theta.dim(), x2.len())?;
    Ok(theta.kernel().eval(x1, x2))
}

/// `K(X, X)`, plus `sigma_n^2 I` when `with_noise` is set.
pub fn covariance_matrix(x: &[Vec<f64>], theta: &Hyperparameters, with_noise: bool) -> Result<DMatrix<f64>> {
    if x.is_empty() {
        return Err(Error::Contract("covariance matrix needs at least one point".into()));
    }
    for xi in x {
        check_dim(theta.dim(), xi.len())?;
    }
    Ok(kernel_matrix(&theta.kernel(), x, with_noise.then(|| theta.noise_variance())))
}

/// Negative log marginal likelihood on the training set's standardized targets.
pub fn nlml(theta: &Hyperparameters, ts: &TrainingSet) -> Result<f64> {
    theta.validate(ts.dim())?;
    let y = ts.standardized_targets();
    factorize(&theta.kernel(), theta.log_sigma_n, ts.inputs(), &y).map(|r| r.2)
}

/// Gradient of [`nlml`] in the layout of [`Hyperparameters::to_vec`].
pub fn nlml_gradient(theta: &Hyperparameters, ts: &TrainingSet) -> Result<Vec<f64>> {
    theta.validate(ts.dim())?;
    let y = ts.standardized_targets();
    nlml_with_gradient(&theta.kernel(), theta.log_sigma_n, ts.inputs(), &y).map(|r| r.1)
}

pub fn fit(ts: TrainingSet, cfg: &FitConfig) -> Result<GpModel> {
    GpModel::fit(ts, cfg)
}

pub fn predict(model: &GpModel, x: &[f64]) -> Result<PosteriorGaussian> {
    model.predict(x)
}
