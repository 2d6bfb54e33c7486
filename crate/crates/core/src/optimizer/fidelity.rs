//! Choosing the fidelity of the next evaluation.
//!
//! HIGH is worth paying for only once the low-fidelity models are confident
//! at the proposed point: every standardized low posterior variance (the
//! objective and each constraint) must fall below `(1 + N_c) * gamma`.

use serde::{Deserialize, Serialize};

use super::msp::GpSet;
use super::FidelityConfig;
use crate::mf::FidelityLevel;

/// Why a decision overrode the variance criterion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcedReason {
    HighBudgetExhausted,
    LowBudgetExhausted,
    /// Single-fidelity strategy: every evaluation is HIGH.
    SingleFidelity,
    /// No usable low-fidelity data yet.
    NoLowData,
}

/// A fidelity decision with the evidence behind it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityDecision {
    pub level: FidelityLevel,
    /// Low posterior variances at `x` on each model's standardized scale,
    /// objective first.
    pub std_variances: Vec<f64>,
    /// The same variances in original units.
    pub raw_variances: Vec<f64>,
    pub threshold: f64,
    pub criterion_met: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forced: Option<ForcedReason>,
}

impl FidelityDecision {
    pub fn forced(level: FidelityLevel, reason: ForcedReason) -> Self {
        Self {
            level,
            std_variances: Vec::new(),
            raw_variances: Vec::new(),
            threshold: f64::NAN,
            criterion_met: false,
            forced: Some(reason),
        }
    }
}

/// Variance threshold for a problem with `n_constraints` constraints.
pub fn fidelity_threshold(gamma: f64, n_constraints: usize) -> f64 {
    (1 + n_constraints) as f64 * gamma
}

/// True when every standardized variance is strictly below the threshold.
pub fn criterion_holds(std_variances: &[f64], threshold: f64) -> bool {
    std_variances.iter().all(|v| *v < threshold)
}

/// Decides the fidelity at unit-box point `x`.
///
/// `high_left` and `low_left` say whether each fidelity still has budget.
pub fn select_fidelity(x: &[f64], low: &GpSet, fc: &FidelityConfig, high_left: bool, low_left: bool) -> FidelityDecision {
    let mut std_variances = Vec::with_capacity(1 + low.constraints.len());
    let mut raw_variances = Vec::with_capacity(1 + low.constraints.len());
    for model in std::iter::once(&low.objective).chain(&low.constraints) {
        let (_, v_std) = model.predict_standardized(x).expect("dimension checked by caller");
        std_variances.push(v_std);
        raw_variances.push(model.training_set().standardizer().invert_variance(v_std));
    }
    let threshold = fidelity_threshold(fc.gamma, low.constraints.len());
    let criterion_met = criterion_holds(&std_variances, threshold);
    let (level, forced) = match (criterion_met, high_left, low_left) {
        (_, false, _) => (FidelityLevel::Low, Some(ForcedReason::HighBudgetExhausted)),
        (true, true, _) => (FidelityLevel::High, None),
        (false, true, true) => (FidelityLevel::Low, None),
        (false, true, false) => (FidelityLevel::High, Some(ForcedReason::LowBudgetExhausted)),
    };
    FidelityDecision {
        level,
        std_variances,
        raw_variances,
        threshold,
        criterion_met,
        forced,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_threshold_is_gamma() {
        let t = fidelity_threshold(0.01, 0);
        assert_eq!(t, 0.01);
        assert!(criterion_holds(&[0.005], t));
        assert!(!criterion_holds(&[0.5], t));
    }

    #[test]
    fn constrained_threshold_scales_with_constraints() {
        let t = fidelity_threshold(0.01, 2);
        assert!((t - 0.03).abs() < 1e-15);
        assert!(criterion_holds(&[0.02, 0.025, 0.01], t));
        assert!(!criterion_holds(&[0.02, 0.031, 0.01], t));
    }
}
