//! Per-seed summaries and their aggregates.
//!
//! Aggregates over the best feasible value use successful seeds only. A seed
//! succeeds when it found any feasible high-fidelity point.

use std::path::Path;

use mfbo_core::optimizer::{RunState, Strategy};
use serde::Serialize;

use crate::commands::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct SeedSummary {
    pub seed: u64,
    pub strategy: Strategy,
    pub best_feasible: Option<f64>,
    pub n_low: usize,
    pub n_high: usize,
    pub spent_equiv: f64,
    pub iterations: usize,
    pub cost_to_target: Option<f64>,
}

impl SeedSummary {
    pub fn from_state(state: &RunState, strategy: Strategy, target: Option<f64>) -> Self {
        Self {
            seed: state.seed,
            strategy,
            best_feasible: state.tau_high(),
            n_low: state.data_low.len(),
            n_high: state.data_high.len(),
            spent_equiv: state.spent_equiv,
            iterations: state.iteration,
            cost_to_target: target.and_then(|t| state.cost_to_target(t)),
        }
    }

    pub fn success(&self) -> bool {
        self.best_feasible.is_some()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub best: Option<f64>,
    pub worst: Option<f64>,
    /// Mean total high-fidelity-equivalent cost per seed.
    pub avg_sim_equiv: f64,
    /// Mean cost to reach the target, over seeds that reached it.
    pub avg_cost_to_target: Option<f64>,
    pub n_reached_target: usize,
    pub n_success: usize,
    pub n_seeds: usize,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

// Median of a sorted slice.
fn median(v: &[f64]) -> Option<f64> {
    let n = v.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(v[n / 2]),
        _ => Some(0.5 * (v[n / 2 - 1] + v[n / 2])),
    }
}

pub fn aggregate(seeds: &[SeedSummary]) -> Aggregate {
    let mut best: Vec<f64> = seeds.iter().filter_map(|s| s.best_feasible).collect();
    best.sort_by(f64::total_cmp);
    let costs: Vec<f64> = seeds.iter().filter_map(|s| s.cost_to_target).collect();
    let spent: Vec<f64> = seeds.iter().map(|s| s.spent_equiv).collect();
    Aggregate {
        mean: mean(&best),
        median: median(&best),
        best: best.first().copied(),
        worst: best.last().copied(),
        avg_sim_equiv: mean(&spent).unwrap_or(0.0),
        avg_cost_to_target: mean(&costs),
        n_reached_target: costs.len(),
        n_success: best.len(),
        n_seeds: seeds.len(),
    }
}

fn strategy_name(s: Strategy) -> &'static str {
    match s {
        Strategy::MultiFidelity => "multi_fidelity",
        Strategy::SingleFidelity => "single_fidelity",
    }
}

#[derive(Serialize)]
struct ReportRow<'a> {
    row: &'a str,
    strategy: &'a str,
    seed: Option<u64>,
    best_feasible: Option<f64>,
    n_low: Option<usize>,
    n_high: Option<usize>,
    spent_equiv: Option<f64>,
    cost_to_target: Option<f64>,
    success: Option<String>,
}

/// Writes one row per seed followed by mean/median/best/worst rows.
pub fn write_report(path: &Path, seeds: &[SeedSummary]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    let ser = |w: &mut csv::Writer<std::fs::File>, r: ReportRow| w.serialize(r).map_err(|e| CliError::Runtime(e.to_string()));
    let mut strategies: Vec<Strategy> = seeds.iter().map(|s| s.strategy).collect();
    strategies.dedup();
    for strategy in strategies {
        let group: Vec<SeedSummary> = seeds.iter().filter(|s| s.strategy == strategy).cloned().collect();
        let name = strategy_name(strategy);
        for s in &group {
            ser(
                &mut w,
                ReportRow {
                    row: "seed",
                    strategy: name,
                    seed: Some(s.seed),
                    best_feasible: s.best_feasible,
                    n_low: Some(s.n_low),
                    n_high: Some(s.n_high),
                    spent_equiv: Some(s.spent_equiv),
                    cost_to_target: s.cost_to_target,
                    success: Some(s.success().to_string()),
                },
            )?;
        }
        let a = aggregate(&group);
        for (label, v) in [("mean", a.mean), ("median", a.median), ("best", a.best), ("worst", a.worst)] {
            let avg = |f: fn(&SeedSummary) -> f64| group.iter().map(f).sum::<f64>() / group.len().max(1) as f64;
            ser(
                &mut w,
                ReportRow {
                    row: label,
                    strategy: name,
                    seed: None,
                    best_feasible: v,
                    n_low: None,
                    n_high: None,
                    spent_equiv: (label == "mean").then(|| avg(|s| s.spent_equiv)),
                    cost_to_target: if label == "mean" { a.avg_cost_to_target } else { None },
                    success: (label == "mean").then(|| format!("{}/{}", a.n_success, a.n_seeds)),
                },
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into())
}

/// Side-by-side table, one column per method.
pub fn comparison_table(methods: &[(Strategy, Aggregate)]) -> String {
    let mut out = format!("{:<22}", "metric");
    for (s, _) in methods {
        out.push_str(&format!("{:>18}", strategy_name(*s)));
    }
    out.push('\n');
    let rows: [(&str, fn(&Aggregate) -> String); 7] = [
        ("mean", |a| fmt(a.mean)),
        ("median", |a| fmt(a.median)),
        ("best", |a| fmt(a.best)),
        ("worst", |a| fmt(a.worst)),
        ("avg_sim_equiv", |a| format!("{:.3}", a.avg_sim_equiv)),
        ("avg_cost_to_target", |a| fmt(a.avg_cost_to_target)),
        ("success", |a| format!("{}/{}", a.n_success, a.n_seeds)),
    ];
    for (label, f) in rows {
        out.push_str(&format!("{label:<22}"));
        for (_, a) in methods {
            out.push_str(&format!("{:>18}", f(a)));
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    method: &'a str,
    mean: Option<f64>,
    median: Option<f64>,
    best: Option<f64>,
    worst: Option<f64>,
    avg_sim_equiv: f64,
    avg_cost_to_target: Option<f64>,
    reached_target: usize,
    success: usize,
    n_seeds: usize,
}

pub fn write_comparison(path: &Path, methods: &[(Strategy, Aggregate)]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    for (s, a) in methods {
        w.serialize(ComparisonRow {
            method: strategy_name(*s),
            mean: a.mean,
            median: a.median,
            best: a.best,
            worst: a.worst,
            avg_sim_equiv: a.avg_sim_equiv,
            avg_cost_to_target: a.avg_cost_to_target,
            reached_target: a.n_reached_target,
            success: a.n_success,
            n_seeds: a.n_seeds,
        })
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
