//! Deterministic stand-in for a training script. Reads its trial from the
//! server named in the environment and reports a fixed learning curve.
//!
//! Environment knobs:
//! - `STUB_OBSERVATIONS`: observations to post (default 5)
//! - `STUB_CRASH_TRIALS`: comma-separated trial ids that exit 3 before reporting
//! - `STUB_SLOW_TRIALS`: trial ids that pause after their first observation,
//!   polling for a stop request, for up to `STUB_SLOW_MS` (default 20000)
//! - `STUB_DELAY_MS`: pause between observations (default 0)
//! - `STUB_ACK_DIR`: directory receiving `<trial>.acks`, one acknowledged
//!   iteration per line

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::thread::sleep;
use std::time::{Duration, Instant};

use hpo_client::ClientSession;
use serde_json::Value;

fn var_u64(name: &str, default: u64) -> u64 {
    std::env::var(name).ok().and_then(|v| v.trim().parse().ok()).unwrap_or(default)
}

fn listed(name: &str, id: u64) -> bool {
    std::env::var(name).is_ok_and(|v| v.split(',').any(|s| s.trim().parse() == Ok(id)))
}

/// A score in (0, n] that depends on every parameter value.
fn quality(parameters: &serde_json::Map<String, Value>) -> f64 {
    parameters
        .iter()
        .filter(|(k, _)| !k.starts_with("sherpa_"))
        .map(|(_, v)| match v {
            Value::Number(n) => {
                let x = n.as_f64().unwrap_or(0.0).abs();
                1.0 / (1.0 + (x + 1e-12).ln().abs())
            }
            Value::String(s) => 1.0 / (1.0 + s.len() as f64),
            Value::Bool(b) => f64::from(u8::from(*b)) * 0.5 + 0.25,
            _ => 0.0,
        })
        .sum()
}

fn main() -> ExitCode {
    let session = match ClientSession::from_env() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("stub worker: {e}");
            return ExitCode::from(2);
        }
    };
    let id = session.trial_id();
    if listed("STUB_CRASH_TRIALS", id) {
        eprintln!("stub worker: trial {id} crashing on request");
        return ExitCode::from(3);
    }
    let trial = match session.get_trial() {
        Ok(t) => t,
        Err(e) => {
            eprintln!("stub worker: {e}");
            return ExitCode::from(4);
        }
    };
    let score = quality(&trial.parameters);
    let delay = Duration::from_millis(var_u64("STUB_DELAY_MS", 0));
    let acks = std::env::var_os("STUB_ACK_DIR").map(|d| PathBuf::from(d).join(format!("{id}.acks")));

    for iteration in 0..var_u64("STUB_OBSERVATIONS", 5) {
        let objective = score * (1.0 - 0.5f64.powi(iteration as i32 + 1));
        if let Err(e) = session.send_metrics(iteration, objective, [("loss", 1.0 - objective / (score + 1.0))]) {
            eprintln!("stub worker: trial {id}: {e}");
            return ExitCode::from(4);
        }
        if let Some(path) = &acks {
            let mut file = OpenOptions::new().create(true).append(true).open(path).expect("ack file");
            writeln!(file, "{iteration}").expect("ack file");
        }
        if iteration == 0 && listed("STUB_SLOW_TRIALS", id) {
            let deadline = Instant::now() + Duration::from_millis(var_u64("STUB_SLOW_MS", 20_000));
            while Instant::now() < deadline {
                if session.should_stop() {
                    return ExitCode::SUCCESS;
                }
                sleep(Duration::from_millis(50));
            }
        }
        sleep(delay);
    }
    ExitCode::SUCCESS
}
