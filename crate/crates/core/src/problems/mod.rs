//! Problem definitions and evaluators.
//!
//! A problem is `minimize f(x) s.t. c_i(x) < 0` over a box, observable at a
//! cheap low fidelity and an expensive high fidelity. Built-in synthetic
//! benchmarks run in-process; real simulators run as child processes that
//! speak a line-delimited JSON protocol (see [`external`]).
//!
//! The low- and high-fidelity definitions of an external problem are up to
//! its author: a shorter transient, a single corner instead of a corner
//! sweep, a coarser mesh. The optimizer only assumes both levels describe
//! the same design space and that the low level is cheaper.

mod builtin;
pub mod external;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::mf::FidelityLevel;
use crate::space::Bounds;

pub use builtin::{builtin_constrained2d, builtin_constrained2d_narrow, builtin_forrester_nl, BuiltinProblem};
pub use external::ExternalEvaluator;

/// Outcome of one evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalStatus {
    Ok,
    Failed,
}

/// Why an evaluation failed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail")]
pub enum EvalFailure {
    Timeout,
    MalformedResponse(String),
    ChildExited(String),
    Evaluator(String),
    Spawn(String),
    OutOfBounds(String),
}

impl std::fmt::Display for EvalFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalFailure::Timeout => f.write_str("Timeout"),
            EvalFailure::MalformedResponse(m) => write!(f, "MalformedResponse: {m}"),
            EvalFailure::ChildExited(m) => write!(f, "ChildExited: {m}"),
            EvalFailure::Evaluator(m) => write!(f, "EvaluatorError: {m}"),
            EvalFailure::Spawn(m) => write!(f, "Spawn: {m}"),
            EvalFailure::OutOfBounds(m) => write!(f, "OutOfBounds: {m}"),
        }
    }
}

/// One black-box evaluation. `x` is in original units. Failed records carry
/// NaN values and are never used for training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub x: Vec<f64>,
    pub fidelity: FidelityLevel,
    #[serde(with = "crate::serde_nan")]
    pub objective: f64,
    #[serde(with = "crate::serde_nan::vec")]
    pub constraints: Vec<f64>,
    pub wall_time: f64,
    pub status: EvalStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<EvalFailure>,
}

impl EvaluationRecord {
    pub fn ok(x: Vec<f64>, fidelity: FidelityLevel, objective: f64, constraints: Vec<f64>, wall_time: f64) -> Self {
        let finite = objective.is_finite() && constraints.iter().all(|c| c.is_finite());
        if !finite {
            return Self::failed(x, fidelity, EvalFailure::MalformedResponse("non-finite value".into()), wall_time);
        }
        Self {
            x,
            fidelity,
            objective,
            constraints,
            wall_time,
            status: EvalStatus::Ok,
            error: None,
        }
    }

    pub fn failed(x: Vec<f64>, fidelity: FidelityLevel, error: EvalFailure, wall_time: f64) -> Self {
        Self {
            x,
            fidelity,
            objective: f64::NAN,
            constraints: Vec::new(),
            wall_time,
            status: EvalStatus::Failed,
            error: Some(error),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == EvalStatus::Ok
    }

    /// OK and every constraint strictly negative.
    pub fn is_feasible(&self) -> bool {
        self.is_ok() && self.constraints.iter().all(|c| *c < 0.0)
    }

    /// Equality on everything except wall time.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let values_eq = |a: f64, b: f64| a.to_bits() == b.to_bits();
        self.x.len() == other.x.len()
            && self.x.iter().zip(&other.x).all(|(a, b)| values_eq(*a, *b))
            && self.fidelity == other.fidelity
            && values_eq(self.objective, other.objective)
            && self.constraints.len() == other.constraints.len()
            && self.constraints.iter().zip(&other.constraints).all(|(a, b)| values_eq(*a, *b))
            && self.status == other.status
            && self.error == other.error
    }
}

/// Where evaluations come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvaluatorKind {
    Builtin(BuiltinProblem),
    External {
        command: Vec<String>,
        #[serde(default = "default_timeout_secs")]
        timeout_secs: f64,
    },
}

fn default_timeout_secs() -> f64 {
    600.0
}

/// A box-constrained problem with `n_constraints` inequality constraints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: String,
    pub bounds: Bounds,
    pub n_constraints: usize,
    pub evaluator: EvaluatorKind,
}

impl ProblemSpec {
    pub fn builtin(problem: BuiltinProblem) -> Self {
        Self {
            name: problem.name().to_string(),
            bounds: Bounds::unit(problem.dimension()),
            n_constraints: problem.n_constraints(),
            evaluator: EvaluatorKind::Builtin(problem),
        }
    }

    pub fn external(name: &str, bounds: Bounds, n_constraints: usize, command: Vec<String>, timeout: Duration) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::Contract("external evaluator command is empty".into()));
        }
        Ok(Self {
            name: name.to_string(),
            bounds,
            n_constraints,
            evaluator: EvaluatorKind::External {
                command,
                timeout_secs: timeout.as_secs_f64(),
            },
        })
    }

    pub fn dimension(&self) -> usize {
        self.bounds.dim()
    }

    pub fn builtin_problem(&self) -> Option<BuiltinProblem> {
        match &self.evaluator {
            EvaluatorKind::Builtin(p) => Some(*p),
            EvaluatorKind::External { .. } => None,
        }
    }

    /// Instantiates the evaluator this spec describes.
    pub fn evaluator(&self) -> Box<dyn Evaluator> {
        match &self.evaluator {
            EvaluatorKind::Builtin(p) => Box::new(*p),
            EvaluatorKind::External { command, timeout_secs } => Box::new(ExternalEvaluator::new(
                command.clone(),
                Duration::from_secs_f64(*timeout_secs),
                self.n_constraints,
            )),
        }
    }
}

/// Anything that can evaluate a design at a fidelity. Failures are reported
/// in the record, never as panics.
pub trait Evaluator: Send {
    fn evaluate(&mut self, x: &[f64], fidelity: FidelityLevel) -> EvaluationRecord;
}

impl<F> Evaluator for F
where
    F: FnMut(&[f64], FidelityLevel) -> EvaluationRecord + Send,
{
    fn evaluate(&mut self, x: &[f64], fidelity: FidelityLevel) -> EvaluationRecord {
        self(x, fidelity)
    }
}

/// Best feasible high-fidelity value of a built-in problem on a regular grid
/// with `resolution` points per axis, plus the objective range over the
/// feasible grid points. Only for `d <= 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridReference {
    pub optimum: f64,
    pub argmin: Vec<f64>,
    pub worst_feasible: f64,
}

impl GridReference {
    pub fn range(&self) -> f64 {
        self.worst_feasible - self.optimum
    }

    /// `(tau - f*) / (f_max - f*)` over the feasible grid.
    pub fn normalized_gap(&self, tau: f64) -> f64 {
        (tau - self.optimum) / self.range()
    }
}

pub fn grid_reference(problem: BuiltinProblem, resolution: usize) -> Result<GridReference> {
    let d = problem.dimension();
    if d > 2 || resolution < 2 {
        return Err(Error::Contract("grid reference needs d <= 2 and resolution >= 2".into()));
    }
    let axis: Vec<f64> = (0..resolution).map(|i| i as f64 / (resolution - 1) as f64).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut worst = f64::NEG_INFINITY;
    let mut visit = |x: Vec<f64>| -> Result<()> {
        let (f, c) = problem.values(&x, FidelityLevel::High)?;
        if c.iter().all(|v| *v < 0.0) {
            worst = worst.max(f);
            if best.as_ref().is_none_or(|(b, _)| f < *b) {
                best = Some((f, x));
            }
        }
        Ok(())
    };
    if d == 1 {
        for a in &axis {
            visit(vec![*a])?;
        }
    } else {
        for a in &axis {
            for b in &axis {
                visit(vec![*a, *b])?;
            }
        }
    }
    let (optimum, argmin) = best.ok_or_else(|| Error::Contract("no feasible grid point".into()))?;
    Ok(GridReference {
        optimum,
        argmin,
        worst_feasible: worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_json_round_trip_keeps_failures() {
        let failed = EvaluationRecord::failed(vec![0.5], FidelityLevel::High, EvalFailure::Timeout, 1.0);
        let json = serde_json::to_string(&failed).unwrap();
        assert!(json.contains("null"));
        let back: EvaluationRecord = serde_json::from_str(&json).unwrap();
        assert!(back.same_outcome(&failed));
        let ok = EvaluationRecord::ok(vec![0.1, 0.2], FidelityLevel::Low, 0.1 + 0.2, vec![-1.0 / 3.0], 0.0);
        let back: EvaluationRecord = serde_json::from_str(&serde_json::to_string(&ok).unwrap()).unwrap();
        assert!(back.same_outcome(&ok));
    }

    #[test]
    fn nonfinite_values_fail_the_record() {
        let r = EvaluationRecord::ok(vec![0.0], FidelityLevel::Low, f64::INFINITY, vec![], 0.0);
        assert_eq!(r.status, EvalStatus::Failed);
    }

    #[test]
    fn feasibility_is_strict() {
        let r = EvaluationRecord::ok(vec![0.0], FidelityLevel::High, 1.0, vec![0.0], 0.0);
        assert!(!r.is_feasible());
        let r = EvaluationRecord::ok(vec![0.0], FidelityLevel::High, 1.0, vec![-1e-9], 0.0);
        assert!(r.is_feasible());
    }
}
