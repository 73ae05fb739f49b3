use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, Receiver};
use std::time::{Duration, Instant};

use hpo_client::ServiceClient;
use hpo_core::results::{read_jsonl, ResultRecord};
use hpo_core::RowStatus;
use serde_json::{json, Value};

use crate::Verdict;

const E2E_TRIALS: u64 = 50;
const E2E_OBSERVATIONS: u64 = 5;
const E2E_CONCURRENCY: usize = 2;
const STOP_TRIALS_TOTAL: u64 = 20;
const CRASHING: [u64; 6] = [4, 7, 10, 13, 16, 19];
const STOPPED: [u64; 2] = [1, 2];
const RUN_DEADLINE: Duration = Duration::from_secs(55);

fn stub_worker() -> &'static str {
    env!("CARGO_BIN_EXE_hpo-stub-worker")
}

fn network_parameters() -> Value {
    json!([
        {"name": "num_units", "kind": "discrete", "range": [50, 100]},
        {"name": "activation", "kind": "choice", "choices": ["relu", "prelu", "elu"]},
        {"name": "learning_rate", "kind": "continuous_log", "range": [1e-4, 1e-1]}
    ])
}

/// A `hpo run` child whose stdout lines arrive on a channel.
struct Run {
    child: Child,
    lines: Receiver<String>,
    output: PathBuf,
}

impl Run {
    fn start(dir: &Path, config: &Value, env: &[(&str, String)]) -> Result<Self, String> {
        let config_path = dir.join("run.json");
        std::fs::write(&config_path, config.to_string()).map_err(|e| e.to_string())?;
        let output = dir.join("out");
        let mut child = Command::new(env!("CARGO_BIN_EXE_hpo"))
            .args(["run", "--config"])
            .arg(&config_path)
            .args(["--port", "0", "--no-dashboard", "--output-dir"])
            .arg(&output)
            .envs(env.iter().map(|(k, v)| (*k, v.as_str())))
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("cannot start hpo: {e}"))?;
        let stdout = child.stdout.take().unwrap();
        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines().map_while(Result::ok) {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self { child, lines, output })
    }

    fn server_url(&self) -> Result<String, String> {
        let deadline = Instant::now() + Duration::from_secs(10);
        while let Ok(line) = self.lines.recv_timeout(deadline.saturating_duration_since(Instant::now())) {
            if let Some(url) = line.strip_prefix("trial server: ") {
                return Ok(url.trim().to_string());
            }
        }
        Err("the run never printed its server URL".into())
    }

    fn wait(mut self) -> Result<(ExitStatus, PathBuf), String> {
        let deadline = Instant::now() + RUN_DEADLINE;
        loop {
            if let Some(status) = self.child.try_wait().map_err(|e| e.to_string())? {
                return Ok((status, self.output));
            }
            if Instant::now() > deadline {
                let _ = self.child.kill();
                return Err("the run did not finish in time".into());
            }
            std::thread::sleep(Duration::from_millis(20));
        }
    }
}

fn read_results(dir: &Path) -> Result<Vec<ResultRecord>, String> {
    let file = File::open(dir.join("results.jsonl")).map_err(|e| format!("results.jsonl: {e}"))?;
    read_jsonl(BufReader::new(file)).map_err(|e| e.to_string())
}

fn terminal(records: &[ResultRecord]) -> BTreeMap<u64, &ResultRecord> {
    records.iter().filter(|r| r.status.is_terminal()).map(|r| (r.trial_id, r)).collect()
}

/// Replays acquire/release events; returns the peak number of held tokens.
fn ledger_peak(dir: &Path, tokens: &[&str]) -> Result<usize, String> {
    let text = std::fs::read_to_string(dir.join("resource_ledger.jsonl")).map_err(|e| e.to_string())?;
    let mut held: BTreeMap<String, u64> = BTreeMap::new();
    let mut peak = 0;
    for line in text.lines() {
        let event: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
        let token = event["token"].as_str().ok_or("ledger event without token")?.to_string();
        let trial = event["trial_id"].as_u64().ok_or("ledger event without trial")?;
        ensure!(tokens.contains(&token.as_str()), "unknown token {token}");
        match event["action"].as_str() {
            Some("acquire") => ensure!(held.insert(token.clone(), trial).is_none(), "token {token} held twice"),
            Some("release") => ensure!(held.remove(&token) == Some(trial), "token {token} released by {trial} without holding it"),
            other => return Err(format!("unknown ledger action {other:?}")),
        }
        peak = peak.max(held.len());
    }
    ensure!(held.is_empty(), "tokens never released: {held:?}");
    Ok(peak)
}

pub fn parallel_run() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let acks = dir.path().join("acks");
    std::fs::create_dir_all(&acks).map_err(|e| e.to_string())?;
    let config = json!({
        "parameters": network_parameters(),
        "algorithm": {"name": "bayesian_optimization", "options": {"max_num_trials": E2E_TRIALS}},
        "lower_is_better": false,
        "command": stub_worker(),
        "max_concurrent": E2E_CONCURRENCY,
        "resources": ["0", "1"],
        "poll_interval_ms": 20,
        "seed": 7
    });
    let env = [("STUB_ACK_DIR", acks.display().to_string()), ("STUB_OBSERVATIONS", E2E_OBSERVATIONS.to_string())];
    let (status, out) = Run::start(dir.path(), &config, &env)?.wait()?;
    ensure!(status.success(), "hpo run exited with {status}");

    let records = read_results(&out)?;
    let finals = terminal(&records);
    ensure!(finals.len() == E2E_TRIALS as usize, "{} terminal trials", finals.len());
    ensure!(finals.keys().copied().eq(1..=E2E_TRIALS), "trial ids are not 1..={E2E_TRIALS}");
    ensure!(finals.values().all(|r| r.status == RowStatus::Completed), "not every trial completed");

    let peak = ledger_peak(&out, &["0", "1"])?;
    ensure!(peak <= E2E_CONCURRENCY, "{peak} tokens held at once");

    let stored: BTreeSet<(u64, u64)> =
        records.iter().filter(|r| r.status == RowStatus::Intermediate).map(|r| (r.trial_id, r.iteration.unwrap())).collect();
    let mut acknowledged = 0;
    for id in 1..=E2E_TRIALS {
        let text = std::fs::read_to_string(acks.join(format!("{id}.acks"))).map_err(|e| format!("trial {id} acks: {e}"))?;
        for iteration in text.lines().map(|l| l.parse::<u64>().unwrap()) {
            ensure!(stored.contains(&(id, iteration)), "acknowledged observation ({id}, {iteration}) missing from results");
            acknowledged += 1;
        }
    }
    ensure!(acknowledged == stored.len(), "{acknowledged} acknowledged, {} stored", stored.len());
    ensure!(acknowledged as u64 == E2E_TRIALS * E2E_OBSERVATIONS, "{acknowledged} observations acknowledged");

    let best: Value = serde_json::from_str(&std::fs::read_to_string(out.join("best.json")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let winner = finals
        .values()
        .filter(|r| r.status == RowStatus::Completed)
        .max_by(|a, b| a.objective.unwrap().total_cmp(&b.objective.unwrap()).then(b.trial_id.cmp(&a.trial_id)))
        .ok_or("no completed trial")?;
    ensure!(best["trial_id"].as_u64() == Some(winner.trial_id), "best.json names {} but results favour {}", best["trial_id"], winner.trial_id);
    ensure!(best["objective"].as_f64() == winner.objective, "best.json objective {} vs {:?}", best["objective"], winner.objective);
    ensure!(best["parameters"] == json!(winner.parameters), "best.json parameters differ from results.jsonl");
    Ok(format!("{E2E_TRIALS} trials completed, peak {peak} tokens, {acknowledged} observations acknowledged and stored"))
}

pub fn crash_and_stop() -> Verdict {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = json!({
        "parameters": network_parameters(),
        "algorithm": {"name": "random_search", "options": {"max_num_trials": STOP_TRIALS_TOTAL}},
        "command": stub_worker(),
        "max_concurrent": 4,
        "poll_interval_ms": 20,
        "seed": 11
    });
    let list = |ids: &[u64]| ids.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
    let env = [("STUB_CRASH_TRIALS", list(&CRASHING)), ("STUB_SLOW_TRIALS", list(&STOPPED)), ("STUB_SLOW_MS", "30000".into())];
    let run = Run::start(dir.path(), &config, &env)?;
    let client = ServiceClient::new(&run.server_url()?);

    let mut pending: BTreeSet<u64> = STOPPED.into_iter().collect();
    let deadline = Instant::now() + Duration::from_secs(20);
    while !pending.is_empty() {
        ensure!(Instant::now() < deadline, "trials {pending:?} never reported");
        let doc = client.results().map_err(|e| e.to_string())?;
        let reported: Vec<u64> =
            doc.trials.iter().filter(|t| pending.contains(&t.id) && !t.observations.is_empty()).map(|t| t.id).collect();
        for id in reported {
            client.stop(id).map_err(|e| format!("stop {id}: {e}"))?;
            pending.remove(&id);
        }
        std::thread::sleep(Duration::from_millis(25));
    }

    let (status, out) = run.wait()?;
    ensure!(status.success(), "hpo run exited with {status}");
    let records = read_results(&out)?;
    let finals = terminal(&records);
    ensure!(finals.len() == STOP_TRIALS_TOTAL as usize, "{} terminal trials", finals.len());
    for (&id, row) in &finals {
        let expected = if CRASHING.contains(&id) {
            RowStatus::Failed
        } else if STOPPED.contains(&id) {
            RowStatus::Stopped
        } else {
            RowStatus::Completed
        };
        ensure!(row.status == expected, "trial {id} is {:?}, expected {expected:?}", row.status);
    }
    for id in STOPPED {
        let kept = records.iter().filter(|r| r.trial_id == id && r.status == RowStatus::Intermediate).count();
        ensure!(kept >= 1, "stopped trial {id} lost its observations");
    }
    Ok(format!(
        "{} failed, {} stopped with observations, {} completed, exit 0",
        CRASHING.len(),
        STOPPED.len(),
        STOP_TRIALS_TOTAL as usize - CRASHING.len() - STOPPED.len()
    ))
}
