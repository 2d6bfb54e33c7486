//! Child-process evaluator.
//!
//! The child is spawned once and kept alive. Each request is one JSON line on
//! its stdin:
//!
//! ```text
//! {"id": 7, "fidelity": "low", "x": [0.1, 0.5]}
//! ```
//!
//! and it answers with one JSON line on stdout, either
//! `{"id": 7, "objective": 1.2, "constraints": [-0.3]}` or
//! `{"id": 7, "error": "solver diverged"}`. Closing stdin asks the child to
//! exit. A request that outlives the timeout kills the child; the next
//! request respawns it.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{EvalFailure, EvaluationRecord, Evaluator, FidelityLevel};

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    fidelity: FidelityLevel,
    x: &'a [f64],
}

#[derive(Deserialize)]
struct Response {
    id: u64,
    objective: Option<f64>,
    constraints: Option<Vec<f64>>,
    error: Option<String>,
}

struct Worker {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

impl Worker {
    fn spawn(command: &[String]) -> std::io::Result<Self> {
        let mut child = Command::new(&command[0])
            .args(&command[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }

    fn exit_description(&mut self) -> String {
        // Give a child that just closed stdout a moment to be reaped.
        for _ in 0..50 {
            if let Ok(Some(status)) = self.child.try_wait() {
                return status.to_string();
            }
            thread::sleep(Duration::from_millis(2));
        }
        "stdout closed".to_string()
    }

    fn kill(mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn shutdown(mut self, grace: Duration) {
        drop(self.stdin.take());
        let deadline = Instant::now() + grace;
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        self.kill();
    }
}

/// Evaluator backed by a persistent child process.
pub struct ExternalEvaluator {
    command: Vec<String>,
    timeout: Duration,
    n_constraints: usize,
    worker: Option<Worker>,
    next_id: u64,
}

impl ExternalEvaluator {
    pub fn new(command: Vec<String>, timeout: Duration, n_constraints: usize) -> Self {
        Self {
            command,
            timeout,
            n_constraints,
            worker: None,
            next_id: 0,
        }
    }

    fn exchange(&mut self, x: &[f64], fidelity: FidelityLevel) -> Result<(f64, Vec<f64>), EvalFailure> {
        if self.command.is_empty() {
            return Err(EvalFailure::Spawn("empty command".into()));
        }
        if self.worker.is_none() {
            let w = Worker::spawn(&self.command).map_err(|e| EvalFailure::Spawn(format!("{}: {e}", self.command[0])))?;
            self.worker = Some(w);
        }
        let id = self.next_id;
        self.next_id += 1;
        let line = serde_json::to_string(&Request { id, fidelity, x }).expect("request serializes");

        let worker = self.worker.as_mut().expect("worker present");
        let written = worker
            .stdin
            .as_mut()
            .map(|s| writeln!(s, "{line}").and_then(|_| s.flush()))
            .unwrap_or_else(|| Err(std::io::ErrorKind::BrokenPipe.into()));
        if written.is_err() {
            let why = worker.exit_description();
            self.discard_worker();
            return Err(EvalFailure::ChildExited(why));
        }

        let reply = worker.lines.recv_timeout(self.timeout);
        match reply {
            Ok(Ok(text)) => {
                let parsed = self.parse(&text, id);
                if matches!(parsed, Err(EvalFailure::MalformedResponse(_))) {
                    // Protocol is out of sync; start fresh next time.
                    self.discard_worker();
                }
                parsed
            }
            Ok(Err(e)) => {
                self.discard_worker();
                Err(EvalFailure::ChildExited(format!("read error: {e}")))
            }
            Err(RecvTimeoutError::Timeout) => {
                self.discard_worker();
                Err(EvalFailure::Timeout)
            }
            Err(RecvTimeoutError::Disconnected) => {
                let why = worker.exit_description();
                self.discard_worker();
                Err(EvalFailure::ChildExited(why))
            }
        }
    }

    fn parse(&self, text: &str, id: u64) -> Result<(f64, Vec<f64>), EvalFailure> {
        let malformed = |m: String| EvalFailure::MalformedResponse(m);
        let resp: Response = serde_json::from_str(text.trim()).map_err(|e| malformed(format!("{e}: {text:.200}")))?;
        if resp.id != id {
            return Err(malformed(format!("expected id {id}, got {}", resp.id)));
        }
        if let Some(err) = resp.error {
            return Err(EvalFailure::Evaluator(err));
        }
        let objective = resp.objective.ok_or_else(|| malformed("missing objective".into()))?;
        let constraints = resp.constraints.unwrap_or_default();
        if constraints.len() != self.n_constraints {
            return Err(malformed(format!(
                "expected {} constraints, got {}",
                self.n_constraints,
                constraints.len()
            )));
        }
        if !objective.is_finite() || constraints.iter().any(|c| !c.is_finite()) {
            return Err(malformed("non-finite value".into()));
        }
        Ok((objective, constraints))
    }

    fn discard_worker(&mut self) {
        if let Some(w) = self.worker.take() {
            w.kill();
        }
    }
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&mut self, x: &[f64], fidelity: FidelityLevel) -> EvaluationRecord {
        let start = Instant::now();
        let out = self.exchange(x, fidelity);
        let wall = start.elapsed().as_secs_f64();
        match out {
            Ok((f, c)) => EvaluationRecord::ok(x.to_vec(), fidelity, f, c, wall),
            Err(e) => {
                log::warn!("evaluation at {x:?} ({fidelity}) failed: {e}");
                EvaluationRecord::failed(x.to_vec(), fidelity, e, wall)
            }
        }
    }
}

impl Drop for ExternalEvaluator {
    fn drop(&mut self) {
        if let Some(w) = self.worker.take() {
            w.shutdown(Duration::from_secs(2));
        }
    }
}
