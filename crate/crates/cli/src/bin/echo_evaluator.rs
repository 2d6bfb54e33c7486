//! Test evaluator speaking the line protocol.
//!
//! Replies with `objective = sum(x)` (the low fidelity adds `0.1 * x_0`) and
//! constraints `c_i = 0.5 - x_i` for the first `--constraints` coordinates.
//! `--garbage` answers with invalid JSON, `--sleep-secs S` delays every
//! answer, and `--fail-every K` reports an error on every K-th request.

use std::io::{BufRead, Write};

use clap::Parser;
use serde::Deserialize;
use serde_json::json;

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 0)]
    constraints: usize,
    #[arg(long)]
    garbage: bool,
    #[arg(long)]
    sleep_secs: Option<f64>,
    #[arg(long)]
    fail_every: Option<u64>,
}

#[derive(Deserialize)]
struct Request {
    id: u64,
    fidelity: String,
    x: Vec<f64>,
}

fn main() {
    let args = Args::parse();
    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout().lock();
    let mut served = 0u64;
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        served += 1;
        if let Some(s) = args.sleep_secs {
            std::thread::sleep(std::time::Duration::from_secs_f64(s));
        }
        if args.garbage {
            let _ = writeln!(stdout, "this is not json");
            let _ = stdout.flush();
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Err(e) => json!({"id": 0, "error": format!("bad request: {e}")}),
            Ok(req) if args.fail_every.is_some_and(|k| served % k == 0) => json!({"id": req.id, "error": "scheduled failure"}),
            Ok(req) => {
                let mut objective: f64 = req.x.iter().sum();
                if req.fidelity == "low" {
                    objective += 0.1 * req.x.first().copied().unwrap_or(0.0);
                }
                let constraints: Vec<f64> = (0..args.constraints).map(|i| 0.5 - req.x.get(i).copied().unwrap_or(0.0)).collect();
                json!({"id": req.id, "objective": objective, "constraints": constraints})
            }
        };
        if writeln!(stdout, "{reply}").and_then(|_| stdout.flush()).is_err() {
            break;
        }
    }
}
