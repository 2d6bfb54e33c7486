//! Multiple-starting-point acquisition maximization.
//!
//! Candidates are scattered over the unit box, with fixed fractions
//! clustered around the current high- and low-fidelity incumbents. The best
//! candidates seed a box-clipped Nelder-Mead refinement and the best refined
//! point wins. wEI of the fused model is Monte-Carlo and only piecewise
//! smooth, so the refinement is derivative-free.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::acquisition::{first_feasible_score, weighted_ei, PosteriorSet};
use crate::error::{invalid, Error, Result};
use crate::gp::GpModel;
use crate::mf::{McConfig, MfModel};
use crate::optim::{minimize_nelder_mead, NelderMeadConfig};
use crate::space::clip_unit;

/// Candidate generation and refinement settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MspConfig {
    pub n_candidates: usize,
    pub frac_around_tau_l: f64,
    pub frac_around_tau_h: f64,
    /// Std of the Gaussian perturbation around an incumbent, unit-box scale.
    pub anchor_radius: f64,
    pub n_local_starts: usize,
    pub local_iteration_cap: usize,
}

impl Default for MspConfig {
    fn default() -> Self {
        Self {
            n_candidates: 200,
            frac_around_tau_l: 0.10,
            frac_around_tau_h: 0.40,
            anchor_radius: 0.05,
            n_local_starts: 10,
            local_iteration_cap: 50,
        }
    }
}

impl MspConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_candidates == 0 {
            return Err(invalid("msp.n_candidates", "must be positive"));
        }
        for (field, v) in [
            ("msp.frac_around_tau_l", self.frac_around_tau_l),
            ("msp.frac_around_tau_h", self.frac_around_tau_h),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(field, format!("must lie in [0, 1], got {v}")));
            }
        }
        if self.frac_around_tau_l + self.frac_around_tau_h > 1.0 {
            return Err(invalid("msp.frac_around_tau_l", "fractions around the incumbents must sum to at most 1"));
        }
        if !(self.anchor_radius >= 0.0 && self.anchor_radius.is_finite()) {
            return Err(invalid("msp.anchor_radius", "must be finite and non-negative"));
        }
        if self.n_local_starts == 0 {
            return Err(invalid("msp.n_local_starts", "must be positive"));
        }
        if self.local_iteration_cap == 0 {
            return Err(invalid("msp.local_iteration_cap", "must be positive"));
        }
        Ok(())
    }
}

/// How many candidates came from each source.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateCounts {
    pub near_high: usize,
    pub near_low: usize,
    pub uniform: usize,
}

/// Candidate points in the unit box, ordered near-high, near-low, uniform.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidates {
    pub points: Vec<Vec<f64>>,
    pub counts: CandidateCounts,
}

/// Scatters `msp.n_candidates` points over `[0, 1]^dim`. An absent anchor's
/// share is drawn uniformly instead.
pub fn propose_candidates<R: Rng + ?Sized>(
    dim: usize,
    anchor_high: Option<&[f64]>,
    anchor_low: Option<&[f64]>,
    msp: &MspConfig,
    rng: &mut R,
) -> Candidates {
    let n = msp.n_candidates;
    let near_high = if anchor_high.is_some() {
        (msp.frac_around_tau_h * n as f64).floor() as usize
    } else {
        0
    };
    let near_low = if anchor_low.is_some() {
        (msp.frac_around_tau_l * n as f64).floor() as usize
    } else {
        0
    };
    let uniform = n - near_high - near_low;
    let mut points = Vec::with_capacity(n);
    let mut around = |anchor: &[f64], count: usize, rng: &mut R| {
        for _ in 0..count {
            let mut p: Vec<f64> = anchor
                .iter()
                .map(|a| {
                    let z: f64 = StandardNormal.sample(rng);
                    a + msp.anchor_radius * z
                })
                .collect();
            clip_unit(&mut p);
            points.push(p);
        }
    };
    if let Some(a) = anchor_high {
        around(a, near_high, rng);
    }
    if let Some(a) = anchor_low {
        around(a, near_low, rng);
    }
    for _ in 0..uniform {
        points.push((0..dim).map(|_| rng.random::<f64>()).collect());
    }
    Candidates {
        points,
        counts: CandidateCounts {
            near_high,
            near_low,
            uniform,
        },
    }
}

/// What the acquisition step optimizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionMode {
    /// Maximize constraint-weighted expected improvement.
    Wei,
    /// Minimize the summed positive constraint means until something is
    /// feasible.
    FirstFeasible,
}

/// Anything that yields objective and constraint posteriors at a unit-box
/// point.
pub trait Surrogate {
    fn dim(&self) -> usize;
    fn posterior(&self, x: &[f64]) -> PosteriorSet;
}

/// Single-fidelity GPs for the objective and each constraint.
#[derive(Clone, Debug)]
pub struct GpSet {
    pub objective: GpModel,
    pub constraints: Vec<GpModel>,
}

impl Surrogate for GpSet {
    fn dim(&self) -> usize {
        self.objective.dim()
    }

    fn posterior(&self, x: &[f64]) -> PosteriorSet {
        PosteriorSet {
            objective: self.objective.predict_unchecked(x),
            constraints: self.constraints.iter().map(|m| m.predict_unchecked(x)).collect(),
        }
    }
}

/// Fused two-fidelity models sharing one Monte-Carlo stream.
#[derive(Clone, Debug)]
pub struct FusedSet {
    pub objective: MfModel,
    pub constraints: Vec<MfModel>,
    pub mc: McConfig,
}

impl Surrogate for FusedSet {
    fn dim(&self) -> usize {
        self.objective.dim()
    }

    fn posterior(&self, x: &[f64]) -> PosteriorSet {
        PosteriorSet {
            objective: self.objective.predict_unchecked(x, &self.mc),
            constraints: self.constraints.iter().map(|m| m.predict_unchecked(x, &self.mc)).collect(),
        }
    }
}

/// Result of one acquisition maximization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionOutcome {
    pub x: Vec<f64>,
    /// wEI in `Wei` mode, the first-feasible score otherwise.
    #[serde(with = "crate::serde_nan")]
    pub value: f64,
    pub mode: AcquisitionMode,
    /// Every candidate had zero wEI; `x` is the most uncertain candidate.
    pub flat_fallback: bool,
}

/// Lower is better in both modes. wEI is log-transformed so that tiny but
/// positive values still give the simplex something to follow.
fn cost(ps: &PosteriorSet, mode: AcquisitionMode, tau: f64) -> f64 {
    match mode {
        AcquisitionMode::Wei => {
            let w = weighted_ei(ps, tau);
            if w > 0.0 {
                -w.ln()
            } else {
                f64::INFINITY
            }
        }
        AcquisitionMode::FirstFeasible => first_feasible_score(ps),
    }
}

fn value_of(cost: f64, mode: AcquisitionMode) -> f64 {
    match mode {
        AcquisitionMode::Wei => (-cost).exp(),
        AcquisitionMode::FirstFeasible => cost,
    }
}

fn max_std_variance(ps: &PosteriorSet) -> f64 {
    std::iter::once(&ps.objective)
        .chain(&ps.constraints)
        .map(|p| p.variance_std)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Scores every candidate, refines the `n_local_starts` best plus any
/// `extra_starts`, and returns the best point found.
///
/// `tau` is the incumbent objective in original units and is required in
/// `Wei` mode.
pub fn maximize_acquisition<S: Surrogate>(
    models: &S,
    mode: AcquisitionMode,
    tau: Option<f64>,
    candidates: &Candidates,
    extra_starts: &[Vec<f64>],
    msp: &MspConfig,
) -> Result<AcquisitionOutcome> {
    let tau = match (mode, tau) {
        (AcquisitionMode::Wei, None) => {
            return Err(Error::Contract("wEI needs an incumbent; use first-feasible mode".into()));
        }
        (_, t) => t.unwrap_or(f64::NAN),
    };
    if candidates.points.is_empty() && extra_starts.is_empty() {
        return Err(Error::Contract("no candidates to score".into()));
    }
    let dim = models.dim();

    let mut scored: Vec<(usize, f64, PosteriorSet)> = candidates
        .points
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let ps = models.posterior(x);
            (i, cost(&ps, mode, tau), ps)
        })
        .collect();

    if mode == AcquisitionMode::Wei && !scored.is_empty() && scored.iter().all(|(_, c, _)| c.is_infinite()) {
        let (i, _, _) = scored
            .iter()
            .fold(None::<&(usize, f64, PosteriorSet)>, |best, s| match best {
                Some(b) if max_std_variance(&b.2) >= max_std_variance(&s.2) => Some(b),
                _ => Some(s),
            })
            .expect("non-empty");
        return Ok(AcquisitionOutcome {
            x: candidates.points[*i].clone(),
            value: 0.0,
            mode,
            flat_fallback: true,
        });
    }

    // Stable sort keeps candidate order among ties.
    scored.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut starts: Vec<Vec<f64>> = scored
        .iter()
        .take(msp.n_local_starts)
        .map(|(i, _, _)| candidates.points[*i].clone())
        .collect();
    starts.extend(extra_starts.iter().cloned());

    let lower = vec![0.0; dim];
    let upper = vec![1.0; dim];
    let nm = NelderMeadConfig {
        max_iters: msp.local_iteration_cap,
        ..NelderMeadConfig::default()
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for start in &starts {
        let (x, c) = minimize_nelder_mead(|p| cost(&models.posterior(p), mode, tau), start, &lower, &upper, &nm);
        if best.as_ref().is_none_or(|(_, b)| c < *b) {
            best = Some((x, c));
        }
    }
    let (x, c) = best.expect("at least one start");
    Ok(AcquisitionOutcome {
        x,
        value: value_of(c, mode),
        mode,
        flat_fallback: false,
    })
}
