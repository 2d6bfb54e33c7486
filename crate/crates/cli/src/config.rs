//! Run configuration.
//!
//! ```toml
//! seeds = [0, 1, 2]
//! output_dir = "runs/c2d"
//!
//! [problem]
//! builtin = "constrained2d"
//!
//! [fidelity]
//! gamma = 0.01
//! cost_ratio = 10.0
//! high_budget = 40
//! total_budget_equiv = 40.0
//! ```
//!
//! An external problem replaces `builtin` with `name`, `command`, `bounds`,
//! `n_constraints` and optionally `timeout_secs`. Every other table is
//! optional and falls back to the library defaults.

use std::path::{Path, PathBuf};
use std::time::Duration;

use mfbo_core::gp::FitConfig;
use mfbo_core::mf::McConfig;
use mfbo_core::optimizer::{FidelityConfig, InitConfig, MspConfig, OptimizerConfig, Strategy};
use mfbo_core::problems::{BuiltinProblem, ProblemSpec};
use mfbo_core::{Bounds, Error};
use serde::{Deserialize, Serialize};

use crate::commands::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<[f64; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_constraints: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSettings {
    pub n_samples: usize,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            n_samples: McConfig::default().n_samples,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub n_restarts: usize,
    pub max_iters: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        let d = FitConfig::default();
        Self {
            n_restarts: d.n_restarts,
            max_iters: d.max_iters,
        }
    }
}

/// Initial design of the single-fidelity baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub n_high: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { n_high: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Cost-to-target uses `f* + target_fraction * (f_max - f*)` over the
    /// feasible reference grid.
    pub target_fraction: f64,
    pub grid_resolution: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            target_fraction: 0.10,
            grid_resolution: 512,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output() -> PathBuf {
    PathBuf::from("mfbo-out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub warm_start: bool,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub fidelity: FidelityConfig,
    #[serde(default)]
    pub msp: MspConfig,
    #[serde(default)]
    pub mc: McSettings,
    #[serde(default)]
    pub fit: FitSettings,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub compare: CompareConfig,
}

/// Command-line overrides of config fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub budget: Option<f64>,
    pub output: Option<PathBuf>,
    pub timeout_secs: Option<f64>,
}

fn field_error(e: Error) -> CliError {
    match e {
        Error::InvalidConfig { field, message } => CliError::Config(format!("{field}: {message}")),
        other => CliError::Config(other.to_string()),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seeds = vec![s];
        }
        if let Some(b) = o.budget {
            self.fidelity.total_budget_equiv = b;
        }
        if let Some(p) = &o.output {
            self.output_dir = p.clone();
        }
        if let Some(t) = o.timeout_secs {
            self.problem.timeout_secs = Some(t);
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds: at least one seed is required".into()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(CliError::Config("output_dir: must not be empty".into()));
        }
        self.problem_spec()?;
        self.optimizer_config(Strategy::MultiFidelity).validate().map_err(field_error)?;
        if self.baseline.n_high == 0 || self.baseline.n_high > self.fidelity.high_budget {
            return Err(CliError::Config("baseline.n_high: must be in 1..=fidelity.high_budget".into()));
        }
        let f = self.compare.target_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(CliError::Config(format!("compare.target_fraction: must lie in (0, 1], got {f}")));
        }
        if self.compare.grid_resolution < 2 {
            return Err(CliError::Config("compare.grid_resolution: must be at least 2".into()));
        }
        Ok(())
    }

    pub fn builtin(&self) -> Option<BuiltinProblem> {
        self.problem.builtin.as_deref().and_then(BuiltinProblem::from_name)
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec, CliError> {
        let p = &self.problem;
        if let Some(name) = &p.builtin {
            let Some(b) = BuiltinProblem::from_name(name) else {
                let known: Vec<&str> = BuiltinProblem::ALL.iter().map(|b| b.name()).collect();
                return Err(CliError::Config(format!("problem.builtin: unknown problem '{name}' (known: {})", known.join(", "))));
            };
            if p.command.is_some() || p.bounds.is_some() {
                return Err(CliError::Config("problem.builtin: cannot be combined with command or bounds".into()));
            }
            return Ok(ProblemSpec::builtin(b));
        }
        let command = p
            .command
            .clone()
            .ok_or_else(|| CliError::Config("problem: set either builtin or command".into()))?;
        if command.is_empty() {
            return Err(CliError::Config("problem.command: must not be empty".into()));
        }
        let pairs = p
            .bounds
            .as_ref()
            .ok_or_else(|| CliError::Config("problem.bounds: required for an external problem".into()))?;
        let pairs: Vec<(f64, f64)> = pairs.iter().map(|b| (b[0], b[1])).collect();
        let bounds = Bounds::from_pairs(&pairs).map_err(|e| CliError::Config(format!("problem.bounds: {e}")))?;
        let timeout = p.timeout_secs.unwrap_or(600.0);
        if !(timeout > 0.0 && timeout.is_finite()) {
            return Err(CliError::Config(format!("problem.timeout_secs: must be positive, got {timeout}")));
        }
        let name = p.name.clone().unwrap_or_else(|| "external".into());
        ProblemSpec::external(&name, bounds, p.n_constraints.unwrap_or(0), command, Duration::from_secs_f64(timeout))
            .map_err(|e| CliError::Config(format!("problem: {e}")))
    }

    pub fn optimizer_config(&self, strategy: Strategy) -> OptimizerConfig {
        let cfg = OptimizerConfig {
            strategy: Strategy::MultiFidelity,
            msp: self.msp.clone(),
            fidelity: self.fidelity.clone(),
            mc: McConfig {
                n_samples: self.mc.n_samples,
                seed: 0,
            },
            fit: FitConfig {
                n_restarts: self.fit.n_restarts,
                max_iters: self.fit.max_iters,
                ..FitConfig::default()
            },
            init: self.init.clone(),
            warm_start: self.warm_start,
        };
        match strategy {
            Strategy::MultiFidelity => cfg,
            Strategy::SingleFidelity => cfg.single_fidelity(self.baseline.n_high),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[problem]
builtin = "constrained2d"
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(cfg.fidelity, FidelityConfig::default());
        assert_eq!(cfg.msp, MspConfig::default());
    }

    #[test]
    fn round_trip_is_identical() {
        let text = r#"
seeds = [3, 4]
output_dir = "out"
[problem]
name = "amp"
command = ["python3", "sim.py", "--fast"]
bounds = [[0.0, 1.0], [-2.5, 2.5]]
n_constraints = 2
timeout_secs = 30.0
[fidelity]
gamma = 0.02
cost_ratio = 20.0
high_budget = 30
total_budget_equiv = 25.5
low_budget = 100
[msp]
n_candidates = 150
[init]
n_low = 12
latin_hypercube = true
"#;
        let a = RunConfig::parse(text).unwrap();
        let b = RunConfig::parse(&a.to_toml()).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
    }

    #[test]
    fn negative_gamma_names_the_field() {
        let cfg = RunConfig::parse(&format!("{MINIMAL}\n[fidelity]\ngamma = -0.5\n")).unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("fidelity.gamma"), "{err}");
    }

    #[test]
    fn unknown_fields_are_rejected_with_location() {
        let err = RunConfig::parse(&format!("{MINIMAL}\n[fidelity]\ngama = 0.5\n")).unwrap_err().to_string();
        assert!(err.contains("gama") && err.contains("line"), "{err}");
    }

    #[test]
    fn unknown_builtin_lists_known_names() {
        let cfg = RunConfig::parse("[problem]\nbuiltin = \"nope\"\n").unwrap();
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("problem.builtin") && err.contains("forrester_nl"), "{err}");
    }

    #[test]
    fn overrides_replace_fields() {
        let mut cfg = RunConfig::parse(MINIMAL).unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            budget: Some(12.0),
            output: Some("x".into()),
            timeout_secs: None,
        });
        assert_eq!(cfg.seeds, vec![9]);
        assert_eq!(cfg.fidelity.total_budget_equiv, 12.0);
        assert_eq!(cfg.output_dir, PathBuf::from("x"));
    }
}
