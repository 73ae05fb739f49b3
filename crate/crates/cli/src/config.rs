//! The declarative run configuration.
//!
//! ```json
//! {
//!   "parameters": [{"name": "learning_rate", "kind": "continuous_log", "range": [1e-4, 1e-2]}],
//!   "algorithm": {"name": "bayesian_optimization", "options": {"max_num_trials": 50}},
//!   "lower_is_better": false,
//!   "command": "python trial.py",
//!   "max_concurrent": 2,
//!   "resources": [0, 1]
//! }
//! ```

use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::time::Duration;

use hpo_core::{AlgorithmSpec, ParameterDef, Study, StudyConfig, StudyError};
use hpo_server::{RunnerConfig, RunnerError, DEFAULT_POLL_INTERVAL, DEFAULT_PORT};
use serde::{Deserialize, Deserializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{}: {detail}", path.display())]
    Parse { path: PathBuf, detail: String },
    #[error("{}: field `{field}`: {detail}", path.display())]
    Invalid { path: PathBuf, field: &'static str, detail: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub parameters: Vec<ParameterDef>,
    pub algorithm: AlgorithmSpec,
    #[serde(default = "yes")]
    pub lower_is_better: bool,
    pub command: String,
    #[serde(default = "one")]
    pub max_concurrent: usize,
    /// Tokens may be written as strings or integers (GPU ordinals).
    #[serde(default, deserialize_with = "tokens")]
    pub resources: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub dashboard: bool,
    #[serde(default)]
    pub port: Option<u16>,
    #[serde(default)]
    pub poll_interval_ms: Option<u64>,
    #[serde(default)]
    pub trial_timeout_secs: Option<f64>,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

fn tokens<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Token {
        Text(String),
        Number(u64),
    }
    let raw = Vec::<Token>::deserialize(deserializer)?;
    Ok(raw
        .into_iter()
        .map(|t| match t {
            Token::Text(s) => s,
            Token::Number(n) => n.to_string(),
        })
        .collect())
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub port: Option<u16>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub no_dashboard: bool,
}

/// A validated run, ready to start.
#[derive(Debug)]
pub struct RunPlan {
    pub study: Study,
    pub runner: RunnerConfig,
    pub output_dir: PathBuf,
    pub dashboard: bool,
    pub seed: u64,
}

pub fn parse(path: &Path, text: &str) -> Result<RunConfigFile, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Parse { path: path.to_path_buf(), detail: e.to_string() })
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<RunPlan, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    plan(path, parse(path, &text)?, overrides)
}

pub fn plan(path: &Path, file: RunConfigFile, overrides: &Overrides) -> Result<RunPlan, ConfigError> {
    let invalid = |field: &'static str, detail: String| ConfigError::Invalid { path: path.to_path_buf(), field, detail };
    if file.command.trim().is_empty() {
        return Err(invalid("command", "must not be empty".into()));
    }
    let trial_timeout = match file.trial_timeout_secs {
        Some(s) if !(s.is_finite() && s > 0.0) => return Err(invalid("trial_timeout_secs", "must be positive".into())),
        Some(s) => Some(Duration::from_secs_f64(s)),
        None => None,
    };
    let port = overrides.port.or(file.port).unwrap_or(DEFAULT_PORT);
    let runner = RunnerConfig {
        command: file.command,
        max_concurrent: file.max_concurrent,
        resources: file.resources,
        poll_interval: file.poll_interval_ms.map(Duration::from_millis).unwrap_or(DEFAULT_POLL_INTERVAL),
        trial_timeout,
        bind: SocketAddr::from((Ipv4Addr::LOCALHOST, port)),
    };
    runner.validate().map_err(|e| match e {
        RunnerError::InvalidConfig(detail) => invalid("max_concurrent", detail),
        other => invalid("max_concurrent", other.to_string()),
    })?;

    let seed = overrides.seed.unwrap_or(file.seed);
    let config = StudyConfig { parameters: file.parameters, algorithm: file.algorithm, lower_is_better: file.lower_is_better };
    let study = Study::new(config, seed).map_err(|e| match e {
        StudyError::Space(e) => invalid("parameters", e.to_string()),
        StudyError::Algorithm(e) => invalid("algorithm", e.to_string()),
        other => invalid("algorithm", other.to_string()),
    })?;
    Ok(RunPlan {
        study,
        runner,
        output_dir: overrides.output_dir.clone().or(file.output_dir).unwrap_or_else(|| PathBuf::from(".")),
        dashboard: file.dashboard && !overrides.no_dashboard,
        seed,
    })
}
