use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use hpo_client::ServiceClient;
use hpo_core::bench::{self, Suite, BENCH_ALGORITHMS};
use hpo_core::results::{canonical_json, canonical_order, read_jsonl, write_csv, write_jsonl};
use hpo_core::{Study, TrialStatus};
use hpo_server::{LocalScheduler, RunReport, RunnerError};

use crate::config::{self, Overrides, RunPlan};
use crate::Format;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Code {
    Success = 0,
    Failure = 1,
    Config = 2,
    Runtime = 3,
}

impl From<Code> for ExitCode {
    fn from(code: Code) -> Self {
        ExitCode::from(code as u8)
    }
}

#[derive(Debug)]
pub struct Failure {
    pub code: Code,
    pub error: anyhow::Error,
}

impl Failure {
    fn new(code: Code, error: impl Into<anyhow::Error>) -> Self {
        Self { code, error: error.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Self { code: Code::Failure, error }
    }
}

pub type Outcome = Result<Code, Failure>;

pub fn run(config_path: &Path, overrides: &Overrides) -> Outcome {
    let RunPlan { study, runner, output_dir, dashboard, seed } =
        config::load(config_path, overrides).map_err(|e| Failure::new(Code::Config, e))?;
    std::fs::create_dir_all(&output_dir).with_context(|| format!("creating {}", output_dir.display()))?;

    let runtime = tokio::runtime::Runtime::new().context("starting the async runtime")?;
    let report = runtime
        .block_on(async {
            let scheduler = LocalScheduler::new(runner.command.clone());
            let handle = hpo_server::start(study, Box::new(scheduler), &runner).await?;
            println!("seed: {seed}");
            if dashboard {
                println!("dashboard: {}/", handle.url());
            } else {
                println!("trial server: {}", handle.url());
            }
            let _ = std::io::stdout().flush();
            Ok::<_, RunnerError>(handle.wait().await)
        })
        .map_err(|e| match e {
            RunnerError::InvalidConfig(_) => Failure::new(Code::Config, e),
            other => Failure::new(Code::Runtime, other),
        })?;

    write_outputs(&report, &output_dir)?;
    let completed = print_summary(&report.study);
    if completed == 0 {
        eprintln!("no trial completed");
        return Ok(Code::Failure);
    }
    Ok(Code::Success)
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Writes results.jsonl, results.csv, best.json and the resource ledger.
fn write_outputs(report: &RunReport, dir: &Path) -> anyhow::Result<()> {
    let mut records = report.study.results().records();
    canonical_order(&mut records);
    let mut out = create(&dir.join("results.jsonl"))?;
    write_jsonl(&records, &mut out)?;
    out.flush()?;
    write_csv(&records, create(&dir.join("results.csv"))?)?;

    let best = report.study.best_result().map(|b| {
        serde_json::json!({ "trial_id": b.trial_id, "parameters": b.parameters, "objective": b.objective })
    });
    std::fs::write(dir.join("best.json"), format!("{}\n", canonical_json(&best)))?;

    let mut ledger = create(&dir.join("resource_ledger.jsonl"))?;
    for event in &report.ledger {
        writeln!(ledger, "{}", canonical_json(event))?;
    }
    ledger.flush()?;
    Ok(())
}

fn status_label(status: TrialStatus) -> String {
    serde_json::to_value(status).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

fn print_summary(study: &Study) -> usize {
    let count = |s: TrialStatus| study.history().iter().filter(|r| r.status == s).count();
    let completed = count(TrialStatus::Completed);
    println!(
        "{} trials: {completed} completed, {} failed, {} stopped",
        study.history().len(),
        count(TrialStatus::Failed),
        count(TrialStatus::Stopped)
    );
    if let Some(best) = study.best_result() {
        println!("best trial {} with objective {}", best.trial_id, best.objective);
    }
    completed
}

pub fn bench(suite: &str, algorithms: Vec<String>, budget: usize, seeds: std::ops::Range<u64>, dir: &Path) -> Outcome {
    let suite: Suite = suite.parse().map_err(|e| Failure::new(Code::Config, e))?;
    let algorithms = if algorithms.is_empty() { BENCH_ALGORITHMS.iter().map(|s| s.to_string()).collect() } else { algorithms };
    let seeds: Vec<u64> = seeds.collect();
    let report = bench::bench(suite, &algorithms, budget, &seeds).map_err(|e| match e {
        bench::BenchError::Study(_) => Failure::new(Code::Failure, e),
        other => Failure::new(Code::Config, other),
    })?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("bench_report.json");
    std::fs::write(&path, format!("{}\n", canonical_json(&report))).with_context(|| format!("writing {}", path.display()))?;
    print!("{}", report.table());
    Ok(Code::Success)
}

pub fn export(results: &Path, format: Format, output: Option<PathBuf>) -> Outcome {
    let file = File::open(results).with_context(|| format!("opening {}", results.display()))?;
    let mut records = read_jsonl(BufReader::new(file)).map_err(|e| Failure::new(Code::Failure, e))?;
    let output = output.unwrap_or_else(|| {
        results.with_extension(match format {
            Format::Csv => "csv",
            Format::Jsonl => "canonical.jsonl",
        })
    });
    match format {
        Format::Csv => write_csv(&records, create(&output)?).context("writing csv")?,
        Format::Jsonl => {
            canonical_order(&mut records);
            let mut out = create(&output)?;
            write_jsonl(&records, &mut out).context("writing jsonl")?;
            out.flush().context("writing jsonl")?;
        }
    }
    println!("{}", output.display());
    Ok(Code::Success)
}

pub fn status(server: &str) -> Outcome {
    let doc = ServiceClient::new(server).results().map_err(|e| Failure::new(Code::Runtime, e))?;
    println!("{:>6}  {:<10}  {:>14}  {:>6}", "trial", "status", "objective", "obs");
    for t in &doc.trials {
        let objective = t.final_objective.map_or_else(|| "-".to_string(), |o| o.to_string());
        println!("{:>6}  {:<10}  {:>14}  {:>6}", t.id, status_label(t.status), objective, t.observations.len());
    }
    Ok(Code::Success)
}

pub fn stop(server: &str, trial_id: u64) -> Outcome {
    ServiceClient::new(server).stop(trial_id).map_err(|e| Failure::new(Code::Runtime, e))?;
    println!("stop requested for trial {trial_id}");
    Ok(Code::Success)
}
