//! Synthetic two-fidelity benchmarks with known optima.
//!
//! - `forrester_nl` (d = 1, unconstrained): low `sin(8 pi x)`, high
//!   `(x - sqrt 2) sin^2(8 pi x)`. The high response is a nonlinear function
//!   of the low one, so no affine map relates the two levels.
//! - `constrained2d` (d = 2, one constraint): high `f = (x1 - 0.3)^2 +
//!   (x2 - 0.7)^2`, `c = 0.25 - x1 - x2`. The low level distorts both:
//!   `f_low = 0.8 f + 0.3 sin(3 x1) cos(2 x2)`, `c_low = c + 0.05 sin(5 x1)`.
//! - `constrained2d_narrow`: the same objective and distortion with a much
//!   smaller feasible region, `c = 1.6 - x1 - x2`.

use std::f64::consts::{PI, SQRT_2};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{EvalFailure, EvaluationRecord, Evaluator, FidelityLevel};
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinProblem {
    ForresterNl,
    Constrained2d,
    Constrained2dNarrow,
}

impl BuiltinProblem {
    pub const ALL: [BuiltinProblem; 3] = [Self::ForresterNl, Self::Constrained2d, Self::Constrained2dNarrow];

    pub fn name(&self) -> &'static str {
        match self {
            Self::ForresterNl => "forrester_nl",
            Self::Constrained2d => "constrained2d",
            Self::Constrained2dNarrow => "constrained2d_narrow",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn dimension(&self) -> usize {
        match self {
            Self::ForresterNl => 1,
            Self::Constrained2d | Self::Constrained2dNarrow => 2,
        }
    }

    pub fn n_constraints(&self) -> usize {
        match self {
            Self::ForresterNl => 0,
            Self::Constrained2d | Self::Constrained2dNarrow => 1,
        }
    }

    /// `(objective, constraints)` at `x` in `[0, 1]^d`.
    pub fn values(&self, x: &[f64], fidelity: FidelityLevel) -> Result<(f64, Vec<f64>)> {
        check_dim(self.dimension(), x.len())?;
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract(format!("{} is defined on the unit box, got {x:?}", self.name())));
        }
        Ok(match self {
            Self::ForresterNl => (forrester_nl(x[0], fidelity), vec![]),
            Self::Constrained2d => quadratic_with_halfplane(x, fidelity, 0.25),
            Self::Constrained2dNarrow => quadratic_with_halfplane(x, fidelity, 1.6),
        })
    }

    pub fn record(&self, x: &[f64], fidelity: FidelityLevel) -> Result<EvaluationRecord> {
        let start = Instant::now();
        let (f, c) = self.values(x, fidelity)?;
        Ok(EvaluationRecord::ok(x.to_vec(), fidelity, f, c, start.elapsed().as_secs_f64()))
    }
}

impl Evaluator for BuiltinProblem {
    fn evaluate(&mut self, x: &[f64], fidelity: FidelityLevel) -> EvaluationRecord {
        self.record(x, fidelity)
            .unwrap_or_else(|e| EvaluationRecord::failed(x.to_vec(), fidelity, EvalFailure::OutOfBounds(e.to_string()), 0.0))
    }
}

fn forrester_nl(x: f64, fidelity: FidelityLevel) -> f64 {
    let low = (8.0 * PI * x).sin();
    match fidelity {
        FidelityLevel::Low => low,
        FidelityLevel::High => (x - SQRT_2) * low * low,
    }
}

fn quadratic_with_halfplane(x: &[f64], fidelity: FidelityLevel, threshold: f64) -> (f64, Vec<f64>) {
    let (x1, x2) = (x[0], x[1]);
    let f = (x1 - 0.3).powi(2) + (x2 - 0.7).powi(2);
    let c = threshold - x1 - x2;
    match fidelity {
        FidelityLevel::High => (f, vec![c]),
        FidelityLevel::Low => (
            0.8 * f + 0.3 * (3.0 * x1).sin() * (2.0 * x2).cos(),
            vec![c + 0.05 * (5.0 * x1).sin()],
        ),
    }
}

pub fn builtin_forrester_nl(x: &[f64], fidelity: FidelityLevel) -> Result<EvaluationRecord> {
    BuiltinProblem::ForresterNl.record(x, fidelity)
}

pub fn builtin_constrained2d(x: &[f64], fidelity: FidelityLevel) -> Result<EvaluationRecord> {
    BuiltinProblem::Constrained2d.record(x, fidelity)
}

pub fn builtin_constrained2d_narrow(x: &[f64], fidelity: FidelityLevel) -> Result<EvaluationRecord> {
    BuiltinProblem::Constrained2dNarrow.record(x, fidelity)
}
