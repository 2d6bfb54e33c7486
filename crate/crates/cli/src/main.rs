use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfbo_cli::{cmd_compare, cmd_report, cmd_resume, cmd_run, Overrides, RunOptions};

/// Multi-fidelity Bayesian optimization runner.
///
/// Log verbosity is read from MFBO_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "mfbo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Total budget in high-fidelity-equivalent evaluations.
    #[arg(long)]
    budget: Option<f64>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Replace an existing output directory.
    #[arg(long)]
    overwrite: bool,
    /// Per-evaluation timeout for external evaluators.
    #[arg(long)]
    timeout_secs: Option<f64>,
    /// Stop each seed after this many iterations.
    #[arg(long, hide = true)]
    max_iterations: Option<usize>,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            overrides: Overrides {
                seed: self.seed,
                budget: self.budget,
                output: self.output.clone(),
                timeout_secs: self.timeout_secs,
            },
            overwrite: self.overwrite,
            baseline_only: false,
            max_iterations: self.max_iterations,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the multi-fidelity optimizer for every configured seed.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Continue a seed from its checkpoint.
    Resume {
        checkpoint: PathBuf,
        #[arg(long)]
        timeout_secs: Option<f64>,
        #[arg(long, hide = true)]
        max_iterations: Option<usize>,
    },
    /// Compare against the single-fidelity baseline on the same seeds.
    Compare {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Run only the single-fidelity baseline.
        #[arg(long)]
        baseline_only: bool,
    },
    /// Rebuild report.csv from the checkpoints of a run directory.
    Report { run_dir: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MFBO_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, common } => cmd_run(&config, &common.options()).map(|_| ()),
        Command::Resume {
            checkpoint,
            timeout_secs,
            max_iterations,
        } => {
            let opts = RunOptions {
                overrides: Overrides {
                    timeout_secs,
                    ..Overrides::default()
                },
                max_iterations,
                ..RunOptions::default()
            };
            cmd_resume(&checkpoint, &opts).map(|_| ())
        }
        Command::Compare {
            config,
            common,
            baseline_only,
        } => {
            let mut opts = common.options();
            opts.baseline_only = baseline_only;
            cmd_compare(&config, &opts).map(|_| ())
        }
        Command::Report { run_dir } => cmd_report(&run_dir).map(|_| ()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
