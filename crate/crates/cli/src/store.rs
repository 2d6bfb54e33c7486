//! On-disk artifacts of a run: checkpoint, event log and trace.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mfbo_core::optimizer::{IterationLog, RunState, StopReason, Strategy};
use mfbo_core::problems::EvaluationRecord;
use serde::{Deserialize, Serialize};

use crate::commands::CliError;
use crate::config::RunConfig;

pub const CHECKPOINT_FORMAT: &str = "mfbo-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.csv";

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed-{seed}"))
}

/// Everything needed to continue a seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub format_version: u32,
    pub config: RunConfig,
    pub strategy: Strategy,
    pub state: RunState,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    format_version: u32,
}

impl Checkpoint {
    pub fn new(config: RunConfig, strategy: Strategy, state: RunState) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            format_version: CHECKPOINT_VERSION,
            config,
            strategy,
            state,
        }
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        write_atomic(path, self)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
        let value: ciborium::Value =
            ciborium::from_reader(bytes.as_slice()).map_err(|e| CliError::CorruptCheckpoint(format!("{}: {e}", path.display())))?;
        let header: Header = value
            .deserialized()
            .map_err(|e| CliError::CorruptCheckpoint(format!("{}: missing header: {e}", path.display())))?;
        if header.format != CHECKPOINT_FORMAT {
            return Err(CliError::CorruptCheckpoint(format!("{}: not a checkpoint file", path.display())));
        }
        if header.format_version != CHECKPOINT_VERSION {
            return Err(CliError::IncompatibleCheckpoint(format!(
                "{}: format version {} (this build reads {CHECKPOINT_VERSION})",
                path.display(),
                header.format_version
            )));
        }
        value
            .deserialized()
            .map_err(|e| CliError::CorruptCheckpoint(format!("{}: {e}", path.display())))
    }
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format: &'a str,
    format_version: u32,
    config: &'a RunConfig,
    strategy: Strategy,
    state: &'a RunState,
}

/// Writes a checkpoint atomically: a crash leaves either the old or the new
/// file.
pub fn write_checkpoint(path: &Path, config: &RunConfig, strategy: Strategy, state: &RunState) -> Result<(), CliError> {
    let ck = CheckpointRef {
        format: CHECKPOINT_FORMAT,
        format_version: CHECKPOINT_VERSION,
        config,
        strategy,
        state,
    };
    write_atomic(path, &ck)
}

fn write_atomic<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let tmp = path.with_extension("bin.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        ciborium::into_writer(value, &mut w).map_err(|e| CliError::Runtime(format!("writing checkpoint: {e}")))?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// One line of `events.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Initial {
        seed: u64,
        record: EvaluationRecord,
    },
    Iteration(IterationLog),
    Finished {
        seed: u64,
        reason: StopReason,
        tau_high: Option<f64>,
        spent_equiv: f64,
    },
}

pub struct EventLog {
    out: BufWriter<File>,
}

impl EventLog {
    /// Starts a fresh log holding the initial design and every logged
    /// iteration of `state`.
    pub fn rewrite(path: &Path, state: &RunState) -> Result<Self, CliError> {
        let mut log = Self {
            out: BufWriter::new(File::create(path)?),
        };
        for record in state.data_low[..state.n_init_low].iter().chain(&state.data_high[..state.n_init_high]) {
            log.append(&Event::Initial {
                seed: state.seed,
                record: record.clone(),
            })?;
        }
        for entry in &state.log {
            log.append(&Event::Iteration(entry.clone()))?;
        }
        Ok(log)
    }

    pub fn append(&mut self, event: &Event) -> Result<(), CliError> {
        serde_json::to_writer(&mut self.out, event).map_err(|e| CliError::Runtime(format!("writing event: {e}")))?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_events(path: &Path) -> Result<Vec<Event>, CliError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::Runtime(format!("{}: bad event line: {e}", path.display()))))
        .collect()
}

#[derive(Serialize)]
struct TraceRow {
    iteration: usize,
    n_low: usize,
    n_high: usize,
    spent_equiv: f64,
    best_high: Option<f64>,
}

pub fn write_trace(path: &Path, state: &RunState) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    for p in state.trace() {
        w.serialize(TraceRow {
            iteration: p.iteration,
            n_low: p.n_low,
            n_high: p.n_high,
            spent_equiv: p.spent_equiv,
            best_high: p.best_high,
        })
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
