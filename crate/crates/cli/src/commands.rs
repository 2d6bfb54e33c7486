//! Subcommand implementations. Each returns data for tests and prints a
//! human-readable summary to stdout.

use std::fs;
use std::path::{Path, PathBuf};

use mfbo_core::optimizer::{Optimizer, RunState, StopReason, Strategy};
use mfbo_core::problems::{grid_reference, Evaluator, GridReference, ProblemSpec};
use rayon::prelude::*;

use crate::config::{Overrides, RunConfig};
use crate::report::{aggregate, comparison_table, write_comparison, write_report, SeedSummary};
use crate::store::{
    seed_dir, write_checkpoint, Checkpoint, Event, EventLog, CHECKPOINT_FILE, EVENTS_FILE, REPORT_FILE, TRACE_FILE,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("CorruptCheckpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("IncompatibleCheckpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("refusing to write into existing output directory {} (pass --overwrite)", .0.display())]
    OutputExists(PathBuf),
    #[error("{0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn runtime(e: mfbo_core::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Flags shared by the subcommands.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub overrides: Overrides,
    pub overwrite: bool,
    pub baseline_only: bool,
    /// Stop each seed after this many iterations, leaving a resumable
    /// checkpoint.
    pub max_iterations: Option<usize>,
}

pub const MULTI_DIR: &str = "multi_fidelity";
pub const SINGLE_DIR: &str = "single_fidelity";

fn load_config(path: &Path, opts: &RunOptions) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path)?;
    cfg.apply(&opts.overrides);
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_output(dir: &Path, overwrite: bool) -> Result<(), CliError> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty {
            if !overwrite {
                return Err(CliError::OutputExists(dir.to_path_buf()));
            }
            fs::remove_dir_all(dir)?;
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn target_for(cfg: &RunConfig) -> Result<Option<(GridReference, f64)>, CliError> {
    let Some(p) = cfg.builtin() else {
        return Ok(None);
    };
    if p.dimension() > 2 {
        return Ok(None);
    }
    let reference = grid_reference(p, cfg.compare.grid_resolution).map_err(runtime)?;
    let target = reference.optimum + cfg.compare.target_fraction * reference.range();
    Ok(Some((reference, target)))
}

fn print_summary(s: &SeedSummary, label: &str) {
    let best = s.best_feasible.map(|v| format!("{v:.6}")).unwrap_or_else(|| "none".into());
    println!(
        "{label} seed {}: best feasible {best} after {} iterations ({:.3} high-equivalent spent; {} low, {} high)",
        s.seed, s.iterations, s.spent_equiv, s.n_low, s.n_high
    );
}

struct SeedJob<'a> {
    cfg: &'a RunConfig,
    optimizer: &'a Optimizer,
    strategy: Strategy,
    dir: PathBuf,
    max_iterations: Option<usize>,
    target: Option<f64>,
}

impl SeedJob<'_> {
    fn start(&self, seed: u64) -> Result<(RunState, SeedSummary), CliError> {
        fs::create_dir_all(&self.dir)?;
        let spec = self.cfg.problem_spec()?;
        let mut evaluator = spec.evaluator();
        let state = self.optimizer.start(seed, evaluator.as_mut()).map_err(runtime)?;
        self.continue_from(state, evaluator.as_mut())
    }

    fn continue_from(&self, mut state: RunState, evaluator: &mut dyn Evaluator) -> Result<(RunState, SeedSummary), CliError> {
        let events = self.dir.join(EVENTS_FILE);
        let checkpoint = self.dir.join(CHECKPOINT_FILE);
        let mut log = EventLog::rewrite(&events, &state)?;
        write_checkpoint(&checkpoint, self.cfg, self.strategy, &state)?;

        let mut failure: Option<CliError> = None;
        let result = self.optimizer.run_from(&mut state, evaluator, self.max_iterations, |st, entry| {
            let step = log
                .append(&Event::Iteration(entry.clone()))
                .and_then(|_| write_checkpoint(&checkpoint, self.cfg, self.strategy, st));
            step.map_err(|e| {
                failure = Some(e);
                mfbo_core::Error::Contract("artifact write failed".into())
            })
        });
        if let Some(e) = failure {
            return Err(e);
        }
        let stop = result.map_err(runtime)?;
        if let Some(reason) = stop {
            log.append(&Event::Finished {
                seed: state.seed,
                reason,
                tau_high: state.tau_high(),
                spent_equiv: state.spent_equiv,
            })?;
        }
        crate::store::write_trace(&self.dir.join(TRACE_FILE), &state)?;
        let summary = SeedSummary::from_state(&state, self.strategy, self.target);
        Ok((state, summary))
    }
}

fn run_strategy(
    cfg: &RunConfig,
    strategy: Strategy,
    root: &Path,
    opts: &RunOptions,
    target: Option<f64>,
) -> Result<Vec<(RunState, SeedSummary)>, CliError> {
    let spec: ProblemSpec = cfg.problem_spec()?;
    let optimizer = Optimizer::new(&spec, cfg.optimizer_config(strategy)).map_err(|e| CliError::Config(e.to_string()))?;
    let results: Vec<Result<(RunState, SeedSummary), CliError>> = cfg
        .seeds
        .par_iter()
        .map(|seed| {
            SeedJob {
                cfg,
                optimizer: &optimizer,
                strategy,
                dir: seed_dir(root, *seed),
                max_iterations: opts.max_iterations,
                target,
            }
            .start(*seed)
        })
        .collect();
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        out.push(r?);
    }
    let summaries: Vec<SeedSummary> = out.iter().map(|(_, s)| s.clone()).collect();
    write_report(&root.join(REPORT_FILE), &summaries)?;
    Ok(out)
}

/// `run <config>`: the multi-fidelity loop for every configured seed.
pub fn cmd_run(config_path: &Path, opts: &RunOptions) -> Result<Vec<SeedSummary>, CliError> {
    let cfg = load_config(config_path, opts)?;
    prepare_output(&cfg.output_dir, opts.overwrite)?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml())?;
    let target = target_for(&cfg)?.map(|(_, t)| t);
    let results = run_strategy(&cfg, Strategy::MultiFidelity, &cfg.output_dir, opts, target)?;
    let summaries: Vec<SeedSummary> = results.into_iter().map(|(_, s)| s).collect();
    for s in &summaries {
        print_summary(s, "multi_fidelity");
    }
    Ok(summaries)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ResumeOutcome {
    AlreadyComplete,
    Continued(SeedSummary),
}

/// `resume <checkpoint>`: continues one seed to budget exhaustion.
pub fn cmd_resume(checkpoint_path: &Path, opts: &RunOptions) -> Result<ResumeOutcome, CliError> {
    let path = if checkpoint_path.is_dir() {
        checkpoint_path.join(CHECKPOINT_FILE)
    } else {
        checkpoint_path.to_path_buf()
    };
    let ck = Checkpoint::read(&path)?;
    let mut cfg = ck.config;
    cfg.apply(&Overrides {
        timeout_secs: opts.overrides.timeout_secs,
        ..Overrides::default()
    });
    let spec = cfg.problem_spec().map_err(|e| CliError::CorruptCheckpoint(e.to_string()))?;
    let optimizer =
        Optimizer::new(&spec, cfg.optimizer_config(ck.strategy)).map_err(|e| CliError::CorruptCheckpoint(e.to_string()))?;
    optimizer
        .validate_state(&ck.state)
        .map_err(|e| CliError::CorruptCheckpoint(format!("{}: {e}", path.display())))?;
    if let Some(StopReason::BudgetExhausted) = optimizer.stop_reason(&ck.state) {
        println!("budget exhausted");
        return Ok(ResumeOutcome::AlreadyComplete);
    }
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    let target = target_for(&cfg)?.map(|(_, t)| t);
    let job = SeedJob {
        cfg: &cfg,
        optimizer: &optimizer,
        strategy: ck.strategy,
        dir: dir.clone(),
        max_iterations: opts.max_iterations,
        target,
    };
    let mut evaluator = spec.evaluator();
    let (_, summary) = job.continue_from(ck.state, evaluator.as_mut())?;
    print_summary(&summary, "resumed");
    if let Some(root) = dir.parent() {
        if let Ok(all) = collect_summaries(root) {
            write_report(&root.join(REPORT_FILE), &all)?;
        }
    }
    Ok(ResumeOutcome::Continued(summary))
}

fn seed_checkpoints(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut found = Vec::new();
    let mut roots = vec![dir.to_path_buf()];
    for sub in [MULTI_DIR, SINGLE_DIR] {
        if dir.join(sub).is_dir() {
            roots.push(dir.join(sub));
        }
    }
    for root in roots {
        let mut entries: Vec<PathBuf> = fs::read_dir(&root)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seed-")))
            .map(|p| p.join(CHECKPOINT_FILE))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        found.extend(entries);
    }
    Ok(found)
}

/// Summaries recomputed from every seed checkpoint under `dir`.
pub fn collect_summaries(dir: &Path) -> Result<Vec<SeedSummary>, CliError> {
    let paths = seed_checkpoints(dir)?;
    if paths.is_empty() {
        return Err(CliError::Runtime(format!("no seed checkpoints under {}", dir.display())));
    }
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let ck = Checkpoint::read(&p)?;
        let target = target_for(&ck.config)?.map(|(_, t)| t);
        out.push(SeedSummary::from_state(&ck.state, ck.strategy, target));
    }
    out.sort_by_key(|s| (s.strategy == Strategy::SingleFidelity, s.seed));
    Ok(out)
}

/// `report <run-dir>`: rebuilds `report.csv` from the seed checkpoints.
pub fn cmd_report(dir: &Path) -> Result<Vec<SeedSummary>, CliError> {
    let summaries = collect_summaries(dir)?;
    write_report(&dir.join(REPORT_FILE), &summaries)?;
    let mut methods = Vec::new();
    for strategy in [Strategy::MultiFidelity, Strategy::SingleFidelity] {
        let group: Vec<SeedSummary> = summaries.iter().filter(|s| s.strategy == strategy).cloned().collect();
        if !group.is_empty() {
            methods.push((strategy, aggregate(&group)));
        }
    }
    print!("{}", comparison_table(&methods));
    Ok(summaries)
}

/// Result of `compare`.
#[derive(Clone, Debug)]
pub struct CompareOutcome {
    pub reference: GridReference,
    pub target: f64,
    pub multi: Vec<(RunState, SeedSummary)>,
    pub single: Vec<(RunState, SeedSummary)>,
    pub table: String,
    /// Seeds where the multi-fidelity run reached the target more cheaply.
    pub paired_wins: Option<usize>,
}

/// `compare <config>`: multi-fidelity against the single-fidelity baseline
/// on the same seeds.
pub fn cmd_compare(config_path: &Path, opts: &RunOptions) -> Result<CompareOutcome, CliError> {
    let cfg = load_config(config_path, opts)?;
    compare_with(&cfg, opts)
}

pub fn compare_with(cfg: &RunConfig, opts: &RunOptions) -> Result<CompareOutcome, CliError> {
    let Some((reference, target)) = target_for(cfg)? else {
        return Err(CliError::Config("problem.builtin: compare needs a builtin problem of dimension <= 2".into()));
    };
    prepare_output(&cfg.output_dir, opts.overwrite)?;
    fs::write(cfg.output_dir.join("config.toml"), cfg.to_toml())?;
    let multi = if opts.baseline_only {
        Vec::new()
    } else {
        run_strategy(cfg, Strategy::MultiFidelity, &cfg.output_dir.join(MULTI_DIR), opts, Some(target))?
    };
    let single = run_strategy(cfg, Strategy::SingleFidelity, &cfg.output_dir.join(SINGLE_DIR), opts, Some(target))?;

    let mut methods = Vec::new();
    if !multi.is_empty() {
        methods.push((Strategy::MultiFidelity, aggregate(&multi.iter().map(|r| r.1.clone()).collect::<Vec<_>>())));
    }
    methods.push((Strategy::SingleFidelity, aggregate(&single.iter().map(|r| r.1.clone()).collect::<Vec<_>>())));
    write_comparison(&cfg.output_dir.join("comparison.csv"), &methods)?;
    let table = comparison_table(&methods);

    let paired_wins = (!multi.is_empty()).then(|| {
        multi
            .iter()
            .zip(&single)
            .filter(|((_, m), (_, s))| match (m.cost_to_target, s.cost_to_target) {
                (Some(a), Some(b)) => a < b,
                (Some(_), None) => true,
                _ => false,
            })
            .count()
    });
    println!("reference optimum {:.6} at {:?}; target {:.6}", reference.optimum, reference.argmin, target);
    print!("{table}");
    if let Some(w) = paired_wins {
        println!("multi-fidelity reached the target more cheaply in {w}/{} seeds", multi.len());
    }
    Ok(CompareOutcome {
        reference,
        target,
        multi,
        single,
        table,
        paired_wins,
    })
}
