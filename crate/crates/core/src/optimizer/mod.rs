//! The multi-fidelity Bayesian optimization loop.
//!
//! Each iteration refits low-fidelity GPs for the objective and every
//! constraint, fuses them with the high-fidelity data, maximizes the
//! low-fidelity wEI to get `x*_l`, maximizes the fused wEI with `x*_l` as an
//! extra local start, and then picks the fidelity. Until a feasible
//! high-fidelity point exists the fused acquisition is replaced by the
//! first-feasible score.
//!
//! Every random choice of iteration `t` comes from a ChaCha8 stream keyed
//! by `(seed, t + 1)`, so a [`RunState`] serialized between iterations
//! resumes onto exactly the trajectory of an uninterrupted run.

mod fidelity;
mod msp;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acquisition::Incumbent;
use crate::error::{invalid, Error, Result};
use crate::gp::{FitConfig, GpModel, TrainingSet};
use crate::mf::{FidelityLevel, McConfig, MfModel};
use crate::problems::{EvaluationRecord, Evaluator, ProblemSpec};
use crate::space::Bounds;

pub use fidelity::{criterion_holds, fidelity_threshold, select_fidelity, FidelityDecision, ForcedReason};
pub use msp::{
    maximize_acquisition, propose_candidates, AcquisitionMode, AcquisitionOutcome, CandidateCounts, Candidates, FusedSet,
    GpSet, MspConfig, Surrogate,
};

/// Fidelity selection and budget settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidelityConfig {
    pub gamma: f64,
    /// Cost of one high-fidelity evaluation in low-fidelity units.
    pub cost_ratio: f64,
    /// Maximum number of high-fidelity evaluations, initial design included.
    pub high_budget: usize,
    /// Stop once this much high-fidelity-equivalent cost has been spent.
    pub total_budget_equiv: f64,
    /// Optional cap on low-fidelity evaluations; once reached, HIGH is forced.
    pub low_budget: Option<usize>,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        Self {
            gamma: 0.01,
            cost_ratio: 10.0,
            high_budget: 40,
            total_budget_equiv: 40.0,
            low_budget: None,
        }
    }
}

impl FidelityConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(invalid("fidelity.gamma", format!("must be positive, got {}", self.gamma)));
        }
        if !(self.cost_ratio > 0.0 && self.cost_ratio.is_finite()) {
            return Err(invalid("fidelity.cost_ratio", format!("must be positive, got {}", self.cost_ratio)));
        }
        if self.high_budget == 0 {
            return Err(invalid("fidelity.high_budget", "must be positive"));
        }
        if !(self.total_budget_equiv >= 0.0 && self.total_budget_equiv.is_finite()) {
            return Err(invalid("fidelity.total_budget_equiv", "must be finite and non-negative"));
        }
        Ok(())
    }

    /// High-fidelity-equivalent cost of the given evaluation counts.
    pub fn spent(&self, n_low: usize, n_high: usize) -> f64 {
        n_high as f64 + n_low as f64 / self.cost_ratio
    }

    pub fn cost_of(&self, level: FidelityLevel) -> f64 {
        match level {
            FidelityLevel::High => 1.0,
            FidelityLevel::Low => 1.0 / self.cost_ratio,
        }
    }
}

/// Which loop to run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    MultiFidelity,
    /// High-fidelity evaluations only, no fusion and no fidelity selection.
    SingleFidelity,
}

/// Size and shape of the random initial design.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub n_low: usize,
    pub n_high: usize,
    pub latin_hypercube: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            n_low: 10,
            n_high: 5,
            latin_hypercube: false,
        }
    }
}

/// Everything the loop needs besides the problem and the seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub strategy: Strategy,
    pub msp: MspConfig,
    pub fidelity: FidelityConfig,
    /// Sample count for fused prediction; the seed is drawn per iteration.
    pub mc: McConfig,
    /// Hyperparameter fitting; the seed is drawn per iteration.
    pub fit: FitConfig,
    pub init: InitConfig,
    /// Start each fit from the previous iteration's hyperparameters as well.
    pub warm_start: bool,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        self.msp.validate()?;
        self.fidelity.validate()?;
        if self.mc.n_samples == 0 {
            return Err(invalid("mc.n_samples", "must be positive"));
        }
        if self.fit.max_iters == 0 {
            return Err(invalid("fit.max_iters", "must be positive"));
        }
        if self.init.n_high == 0 {
            return Err(invalid("init.n_high", "must be positive"));
        }
        if self.strategy == Strategy::MultiFidelity && self.init.n_low == 0 {
            return Err(invalid("init.n_low", "must be positive for the multi-fidelity strategy"));
        }
        if self.init.n_high > self.fidelity.high_budget {
            return Err(invalid("init.n_high", "exceeds fidelity.high_budget"));
        }
        Ok(())
    }

    /// The single-fidelity counterpart of this configuration with an
    /// all-high initial design of `n_high` points.
    pub fn single_fidelity(&self, n_high: usize) -> Self {
        let mut cfg = self.clone();
        cfg.strategy = Strategy::SingleFidelity;
        cfg.init = InitConfig {
            n_low: 0,
            n_high,
            latin_hypercube: self.init.latin_hypercube,
        };
        cfg
    }
}

/// Initial points in original units.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InitialDesign {
    pub low: Vec<Vec<f64>>,
    pub high: Vec<Vec<f64>>,
}

/// Why a run stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BudgetExhausted,
}

/// Flat hyperparameter vectors from the last fits, for warm starts.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WarmThetas {
    pub low: Vec<Vec<f64>>,
    pub fused: Vec<Vec<f64>>,
}

/// One iteration's diagnostics and outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub strategy: Strategy,
    pub candidates: CandidateCounts,
    /// Low-fidelity acquisition optimum, original units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_low_star: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub low_acquisition: Option<AcquisitionOutcome>,
    pub acquisition: AcquisitionOutcome,
    pub decision: FidelityDecision,
    /// Models that fell back to default hyperparameters.
    pub fit_fallbacks: Vec<String>,
    /// NLML of each fitted model: low objective and constraints, then fused.
    pub model_nlml: Vec<f64>,
    pub record: EvaluationRecord,
    pub tau_low: Option<f64>,
    pub tau_high: Option<f64>,
    pub spent_equiv: f64,
}

/// Complete, serializable optimizer state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub seed: u64,
    /// Completed loop iterations (the initial design is not one).
    pub iteration: usize,
    pub data_low: Vec<EvaluationRecord>,
    pub data_high: Vec<EvaluationRecord>,
    pub n_init_low: usize,
    pub n_init_high: usize,
    pub init_spent_equiv: f64,
    pub incumbent_low: Option<Incumbent>,
    pub incumbent_high: Option<Incumbent>,
    pub spent_equiv: f64,
    pub log: Vec<IterationLog>,
    #[serde(default)]
    pub warm: Option<WarmThetas>,
}

/// Best feasible OK record: lowest objective, earliest on ties.
pub fn incumbent(data: &[EvaluationRecord]) -> Option<Incumbent> {
    data.iter()
        .enumerate()
        .filter(|(_, r)| r.is_feasible())
        .fold(None, |best: Option<Incumbent>, (i, r)| match best {
            Some(b) if b.tau <= r.objective => Some(b),
            _ => Some(Incumbent {
                tau: r.objective,
                index: i,
            }),
        })
}

/// One point of a convergence trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    /// 0 for the initial design.
    pub iteration: usize,
    pub n_low: usize,
    pub n_high: usize,
    pub spent_equiv: f64,
    pub best_high: Option<f64>,
}

impl RunState {
    pub fn tau_high(&self) -> Option<f64> {
        self.incumbent_high.map(|i| i.tau)
    }

    pub fn tau_low(&self) -> Option<f64> {
        self.incumbent_low.map(|i| i.tau)
    }

    pub fn best_high_point(&self) -> Option<&EvaluationRecord> {
        self.incumbent_high.map(|i| &self.data_high[i.index])
    }

    /// Best-so-far high-fidelity value against spent cost, initial design
    /// first.
    pub fn trace(&self) -> Vec<TracePoint> {
        let mut points = Vec::with_capacity(self.log.len() + 1);
        let (mut n_low, mut n_high) = (self.n_init_low, self.n_init_high);
        points.push(TracePoint {
            iteration: 0,
            n_low,
            n_high,
            spent_equiv: self.init_spent_equiv,
            best_high: incumbent(&self.data_high[..self.n_init_high]).map(|i| i.tau),
        });
        for entry in &self.log {
            match entry.record.fidelity {
                FidelityLevel::Low => n_low += 1,
                FidelityLevel::High => n_high += 1,
            }
            points.push(TracePoint {
                iteration: entry.iteration + 1,
                n_low,
                n_high,
                spent_equiv: entry.spent_equiv,
                best_high: entry.tau_high,
            });
        }
        points
    }

    /// Cost spent when the best high-fidelity value first reached `target`.
    pub fn cost_to_target(&self, target: f64) -> Option<f64> {
        self.trace()
            .into_iter()
            .find(|p| p.best_high.is_some_and(|b| b <= target))
            .map(|p| p.spent_equiv)
    }

    /// Spent cost when the first feasible high-fidelity point appeared.
    pub fn cost_to_first_feasible(&self) -> Option<f64> {
        self.trace().into_iter().find(|p| p.best_high.is_some()).map(|p| p.spent_equiv)
    }
}

/// Result of a single [`Optimizer::step`].
#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Evaluated(Box<IterationLog>),
    Finished(StopReason),
}

/// Relative slack when comparing spent cost against the budget.
const BUDGET_EPS: f64 = 1e-9;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn sample_unit<R: Rng>(rng: &mut R, n: usize, dim: usize, latin_hypercube: bool) -> Vec<Vec<f64>> {
    if !latin_hypercube || n == 0 {
        return (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
    }
    let mut points = vec![vec![0.0; dim]; n];
    for j in 0..dim {
        let mut strata: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            strata.swap(i, rng.random_range(0..=i));
        }
        for (p, s) in points.iter_mut().zip(strata) {
            p[j] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

struct FittedSet {
    set: GpSet,
    thetas: Vec<Vec<f64>>,
}

struct FusedFit {
    set: FusedSet,
    thetas: Vec<Vec<f64>>,
}

/// The loop for one problem and configuration.
#[derive(Clone, Debug)]
pub struct Optimizer {
    bounds: Bounds,
    n_constraints: usize,
    cfg: OptimizerConfig,
}

impl Optimizer {
    pub fn new(problem: &ProblemSpec, cfg: OptimizerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            bounds: problem.bounds.clone(),
            n_constraints: problem.n_constraints,
            cfg,
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    /// The seeded random initial design in original units.
    pub fn initial_design(&self, seed: u64) -> InitialDesign {
        let mut rng = stream(seed, 0);
        let d = self.bounds.dim();
        let lhs = self.cfg.init.latin_hypercube;
        let n_low = match self.cfg.strategy {
            Strategy::MultiFidelity => self.cfg.init.n_low,
            Strategy::SingleFidelity => 0,
        };
        let low = sample_unit(&mut rng, n_low, d, lhs);
        let high = sample_unit(&mut rng, self.cfg.init.n_high, d, lhs);
        InitialDesign {
            low: low.iter().map(|u| self.bounds.from_unit(u)).collect(),
            high: high.iter().map(|u| self.bounds.from_unit(u)).collect(),
        }
    }

    /// Evaluates `design` and returns the state before the first iteration.
    pub fn initialize(&self, seed: u64, design: &InitialDesign, evaluator: &mut dyn Evaluator) -> Result<RunState> {
        if self.cfg.strategy == Strategy::SingleFidelity && !design.low.is_empty() {
            return Err(Error::Contract("single-fidelity runs take no low-fidelity initial points".into()));
        }
        if design.high.len() > self.cfg.fidelity.high_budget {
            return Err(invalid("init.n_high", "initial design exceeds fidelity.high_budget"));
        }
        for x in design.low.iter().chain(&design.high) {
            if !self.bounds.contains(x) {
                return Err(Error::Contract(format!("initial point {x:?} is outside the bounds")));
            }
        }
        let data_low: Vec<EvaluationRecord> = design.low.iter().map(|x| evaluator.evaluate(x, FidelityLevel::Low)).collect();
        let data_high: Vec<EvaluationRecord> = design.high.iter().map(|x| evaluator.evaluate(x, FidelityLevel::High)).collect();
        let spent = self.cfg.fidelity.spent(data_low.len(), data_high.len());
        Ok(RunState {
            seed,
            iteration: 0,
            n_init_low: data_low.len(),
            n_init_high: data_high.len(),
            init_spent_equiv: spent,
            incumbent_low: incumbent(&data_low),
            incumbent_high: incumbent(&data_high),
            data_low,
            data_high,
            spent_equiv: spent,
            log: Vec::new(),
            warm: None,
        })
    }

    /// Initial design from the seed, evaluated.
    pub fn start(&self, seed: u64, evaluator: &mut dyn Evaluator) -> Result<RunState> {
        let design = self.initial_design(seed);
        self.initialize(seed, &design, evaluator)
    }

    fn high_left(&self, state: &RunState) -> bool {
        state.data_high.len() < self.cfg.fidelity.high_budget
    }

    fn low_left(&self, state: &RunState) -> bool {
        self.cfg.strategy == Strategy::MultiFidelity
            && self.cfg.fidelity.low_budget.is_none_or(|b| state.data_low.len() < b)
    }

    pub fn stop_reason(&self, state: &RunState) -> Option<StopReason> {
        let total = self.cfg.fidelity.total_budget_equiv;
        let spent_out = state.spent_equiv >= total - BUDGET_EPS * total.max(1.0);
        if spent_out || (!self.high_left(state) && !self.low_left(state)) {
            Some(StopReason::BudgetExhausted)
        } else {
            None
        }
    }

    /// Checks that a deserialized state is consistent with its own data and
    /// with this configuration.
    pub fn validate_state(&self, state: &RunState) -> Result<()> {
        let bad = |m: &str| Err(Error::Contract(format!("inconsistent run state: {m}")));
        if incumbent(&state.data_low) != state.incumbent_low || incumbent(&state.data_high) != state.incumbent_high {
            return bad("incumbents do not match the data");
        }
        let spent = self.cfg.fidelity.spent(state.data_low.len(), state.data_high.len());
        if (spent - state.spent_equiv).abs() > 1e-9 * spent.max(1.0) {
            return bad("spent cost does not match the evaluation counts");
        }
        if state.log.len() != state.iteration
            || state.n_init_low + state.n_init_high + state.iteration != state.data_low.len() + state.data_high.len()
        {
            return bad("iteration count does not match the data");
        }
        let d = self.bounds.dim();
        if state.data_low.iter().chain(&state.data_high).any(|r| r.x.len() != d) {
            return bad("design dimension does not match the problem");
        }
        Ok(())
    }

    fn unit_of(&self, data: &[EvaluationRecord], inc: Option<Incumbent>) -> Option<Vec<f64>> {
        inc.map(|i| self.bounds.to_unit(&data[i.index].x))
    }

    fn training_sets(&self, data: &[EvaluationRecord]) -> Result<Option<Vec<TrainingSet>>> {
        let ok: Vec<&EvaluationRecord> = data.iter().filter(|r| r.is_ok()).collect();
        if ok.is_empty() {
            return Ok(None);
        }
        let inputs: Vec<Vec<f64>> = ok.iter().map(|r| self.bounds.to_unit(&r.x)).collect();
        let mut sets = Vec::with_capacity(1 + self.n_constraints);
        sets.push(TrainingSet::new(inputs.clone(), ok.iter().map(|r| r.objective).collect())?);
        for k in 0..self.n_constraints {
            sets.push(TrainingSet::new(inputs.clone(), ok.iter().map(|r| r.constraints[k]).collect())?);
        }
        Ok(Some(sets))
    }

    fn fit_cfg(&self, seed: u64, warm: Option<&Vec<f64>>) -> FitConfig {
        let mut cfg = self.cfg.fit.clone().with_seed(seed);
        if self.cfg.warm_start {
            cfg.warm_start = warm.cloned();
        }
        cfg
    }

    fn fit_gps(
        &self,
        data: &[EvaluationRecord],
        seed: u64,
        warm: Option<&[Vec<f64>]>,
        tag: &str,
        fallbacks: &mut Vec<String>,
        nlml: &mut Vec<f64>,
    ) -> Result<Option<FittedSet>> {
        let Some(sets) = self.training_sets(data)? else {
            return Ok(None);
        };
        let mut models = Vec::with_capacity(sets.len());
        for (k, ts) in sets.into_iter().enumerate() {
            let cfg = self.fit_cfg(seed.wrapping_add(k as u64), warm.and_then(|w| w.get(k)));
            let (model, fell_back) = GpModel::fit_or_default(ts, &cfg)?;
            if fell_back {
                log::warn!("{tag} model {k}: fit failed, using default hyperparameters");
                fallbacks.push(format!("{tag}[{k}]"));
            }
            nlml.push(model.nlml());
            models.push(model);
        }
        let thetas = models.iter().map(|m| m.theta().to_vec()).collect();
        let objective = models.remove(0);
        Ok(Some(FittedSet {
            set: GpSet {
                objective,
                constraints: models,
            },
            thetas,
        }))
    }

    #[allow(clippy::too_many_arguments)]
    fn fuse(
        &self,
        low: &GpSet,
        data_high: &[EvaluationRecord],
        seed: u64,
        mc_seed: u64,
        warm: Option<&[Vec<f64>]>,
        fallbacks: &mut Vec<String>,
        nlml: &mut Vec<f64>,
    ) -> Result<Option<FusedFit>> {
        let Some(sets) = self.training_sets(data_high)? else {
            return Ok(None);
        };
        let lows = std::iter::once(&low.objective).chain(&low.constraints);
        let mut models = Vec::with_capacity(sets.len());
        for (k, (ts, lm)) in sets.into_iter().zip(lows).enumerate() {
            let cfg = self.fit_cfg(seed.wrapping_add(k as u64), warm.and_then(|w| w.get(k)));
            let (model, fell_back) = MfModel::fit_or_default(lm.clone(), &ts, &cfg)?;
            if fell_back {
                log::warn!("fused model {k}: fit failed, using default hyperparameters");
                fallbacks.push(format!("fused[{k}]"));
            }
            nlml.push(model.nlml());
            models.push(model);
        }
        let thetas = models.iter().map(|m| m.theta().to_vec()).collect();
        let objective = models.remove(0);
        Ok(Some(FusedFit {
            set: FusedSet {
                objective,
                constraints: models,
                mc: McConfig {
                    n_samples: self.cfg.mc.n_samples,
                    seed: mc_seed,
                },
            },
            thetas,
        }))
    }

    fn mode_for(tau: Option<f64>) -> AcquisitionMode {
        if tau.is_some() {
            AcquisitionMode::Wei
        } else {
            AcquisitionMode::FirstFeasible
        }
    }

    fn explore(candidates: &Candidates) -> AcquisitionOutcome {
        AcquisitionOutcome {
            x: candidates.points.last().expect("n_candidates > 0").clone(),
            value: f64::NAN,
            mode: AcquisitionMode::Wei,
            flat_fallback: true,
        }
    }

    /// Runs one iteration, or reports that the budget is spent.
    pub fn step(&self, state: &mut RunState, evaluator: &mut dyn Evaluator) -> Result<StepOutcome> {
        if let Some(reason) = self.stop_reason(state) {
            return Ok(StepOutcome::Finished(reason));
        }
        let t = state.iteration;
        let mut rng = stream(state.seed, t as u64 + 1);
        let fit_seed = rng.next_u64();
        let mc_seed = rng.next_u64();
        let dim = self.bounds.dim();
        let anchor_high = self.unit_of(&state.data_high, state.incumbent_high);
        let anchor_low = match self.cfg.strategy {
            Strategy::MultiFidelity => self.unit_of(&state.data_low, state.incumbent_low),
            Strategy::SingleFidelity => None,
        };
        let candidates = propose_candidates(dim, anchor_high.as_deref(), anchor_low.as_deref(), &self.cfg.msp, &mut rng);

        let mut fallbacks = Vec::new();
        let mut nlml = Vec::new();
        let prev = state.warm.clone().unwrap_or_default();
        let mut warm = WarmThetas::default();
        let tau_high = state.tau_high();

        let (low_acquisition, acquisition, decision) = match self.cfg.strategy {
            Strategy::SingleFidelity => {
                let fitted = self.fit_gps(&state.data_high, fit_seed, Some(&prev.low), "high", &mut fallbacks, &mut nlml)?;
                let acq = match fitted {
                    Some(f) => {
                        warm.low = f.thetas;
                        let mode = Self::mode_for(tau_high);
                        maximize_acquisition(&f.set, mode, tau_high, &candidates, &[], &self.cfg.msp)?
                    }
                    None => Self::explore(&candidates),
                };
                (None, acq, FidelityDecision::forced(FidelityLevel::High, ForcedReason::SingleFidelity))
            }
            Strategy::MultiFidelity => {
                let fitted = self.fit_gps(&state.data_low, fit_seed, Some(&prev.low), "low", &mut fallbacks, &mut nlml)?;
                match fitted {
                    None => {
                        let level = if self.low_left(state) {
                            FidelityLevel::Low
                        } else {
                            FidelityLevel::High
                        };
                        (None, Self::explore(&candidates), FidelityDecision::forced(level, ForcedReason::NoLowData))
                    }
                    Some(low) => {
                        warm.low = low.thetas;
                        let tau_low = state.tau_low();
                        let low_acq = maximize_acquisition(
                            &low.set,
                            Self::mode_for(tau_low),
                            tau_low,
                            &candidates,
                            &[],
                            &self.cfg.msp,
                        )?;
                        let fused = self.fuse(
                            &low.set,
                            &state.data_high,
                            fit_seed.wrapping_add(1 << 32),
                            mc_seed,
                            Some(&prev.fused),
                            &mut fallbacks,
                            &mut nlml,
                        )?;
                        let acq = match fused {
                            Some(f) => {
                                warm.fused = f.thetas;
                                maximize_acquisition(
                                    &f.set,
                                    Self::mode_for(tau_high),
                                    tau_high,
                                    &candidates,
                                    std::slice::from_ref(&low_acq.x),
                                    &self.cfg.msp,
                                )?
                            }
                            None => low_acq.clone(),
                        };
                        let decision = select_fidelity(
                            &acq.x,
                            &low.set,
                            &self.cfg.fidelity,
                            self.high_left(state),
                            self.low_left(state),
                        );
                        (Some(low_acq), acq, decision)
                    }
                }
            }
        };

        let x = self.bounds.from_unit(&acquisition.x);
        let record = evaluator.evaluate(&x, decision.level);
        if !record.is_ok() {
            log::warn!("iteration {t}: evaluation failed ({:?}); point skipped", record.error);
        }
        match decision.level {
            FidelityLevel::Low => {
                state.data_low.push(record.clone());
                state.incumbent_low = incumbent(&state.data_low);
            }
            FidelityLevel::High => {
                state.data_high.push(record.clone());
                state.incumbent_high = incumbent(&state.data_high);
            }
        }
        state.spent_equiv = self.cfg.fidelity.spent(state.data_low.len(), state.data_high.len());
        state.iteration += 1;
        state.warm = self.cfg.warm_start.then_some(warm);

        let entry = IterationLog {
            iteration: t,
            strategy: self.cfg.strategy,
            candidates: candidates.counts,
            x_low_star: low_acquisition.as_ref().map(|a| self.bounds.from_unit(&a.x)),
            low_acquisition,
            acquisition,
            decision,
            fit_fallbacks: fallbacks,
            model_nlml: nlml,
            record,
            tau_low: state.tau_low(),
            tau_high: state.tau_high(),
            spent_equiv: state.spent_equiv,
        };
        state.log.push(entry.clone());
        Ok(StepOutcome::Evaluated(Box::new(entry)))
    }

    /// Steps until the budget is spent or `max_iterations` more iterations
    /// have run, calling `observer` after each one.
    pub fn run_from<F>(
        &self,
        state: &mut RunState,
        evaluator: &mut dyn Evaluator,
        max_iterations: Option<usize>,
        mut observer: F,
    ) -> Result<Option<StopReason>>
    where
        F: FnMut(&RunState, &IterationLog) -> Result<()>,
    {
        let mut done = 0;
        loop {
            if max_iterations.is_some_and(|m| done >= m) {
                return Ok(self.stop_reason(state));
            }
            match self.step(state, evaluator)? {
                StepOutcome::Finished(r) => return Ok(Some(r)),
                StepOutcome::Evaluated(entry) => observer(state, &entry)?,
            }
            done += 1;
        }
    }

    /// Initial design plus the full loop.
    pub fn run(&self, seed: u64, evaluator: &mut dyn Evaluator) -> Result<RunState> {
        let mut state = self.start(seed, evaluator)?;
        self.run_from(&mut state, evaluator, None, |_, _| Ok(()))?;
        Ok(state)
    }
}

/// Runs the configured loop on `problem` with its own evaluator.
pub fn run(problem: &ProblemSpec, cfg: &OptimizerConfig, seed: u64) -> Result<RunState> {
    let opt = Optimizer::new(problem, cfg.clone())?;
    let mut evaluator = problem.evaluator();
    opt.run(seed, evaluator.as_mut())
}
