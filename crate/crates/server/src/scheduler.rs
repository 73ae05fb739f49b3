//! Job schedulers. A scheduler starts one job per trial and reports job
//! status when polled; it never blocks.

use std::collections::BTreeMap;
use std::process::{Child, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use hpo_core::TrialId;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

pub const TRIAL_ID_VAR: &str = "SHERPA_TRIAL_ID";
pub const SERVER_VAR: &str = "SHERPA_SERVER";
pub const RESOURCE_VAR: &str = "SHERPA_RESOURCE";

/// Time between a graceful termination signal and the hard kill.
pub const KILL_GRACE: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobStatus {
    Queued,
    Running,
    Finished,
    Failed,
    Killed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Finished | JobStatus::Failed | JobStatus::Killed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobSpec {
    pub trial_id: TrialId,
    pub resource_token: String,
    /// Value of the server-address variable handed to the worker.
    pub server: String,
}

impl JobSpec {
    pub fn env(&self) -> [(&'static str, String); 3] {
        [
            (TRIAL_ID_VAR, self.trial_id.to_string()),
            (SERVER_VAR, self.server.clone()),
            (RESOURCE_VAR, self.resource_token.clone()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedulerJob {
    pub job_id: String,
    pub trial_id: TrialId,
    pub resource_token: String,
    pub status: JobStatus,
}

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("failed to start job for trial {trial_id}: {detail}")]
    SpawnFailed { trial_id: TrialId, detail: String },
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("job {0} already finished")]
    AlreadyTerminal(String),
    #[error("scheduler unavailable: {0}")]
    Unavailable(String),
}

pub trait Scheduler: Send {
    fn submit(&mut self, job: &JobSpec) -> Result<SchedulerJob, SchedulerError>;

    /// Status of every job that changed since the previous poll. Each job is
    /// reported terminal exactly once; afterwards it is forgotten.
    fn poll(&mut self) -> Vec<SchedulerJob>;

    /// Terminates a job: graceful signal first, hard kill after the grace period.
    fn kill(&mut self, job_id: &str) -> Result<(), SchedulerError>;

    /// Jobs not yet reported terminal.
    fn active(&self) -> usize;
}

struct LocalJob {
    trial_id: TrialId,
    resource_token: String,
    child: Child,
    kill_requested: Option<Instant>,
    hard_killed: bool,
}

/// Runs each job as a child process on this machine via `sh -c`.
pub struct LocalScheduler {
    command: String,
    grace: Duration,
    jobs: BTreeMap<String, LocalJob>,
    next_job: u64,
    quiet: bool,
}

impl LocalScheduler {
    pub fn new(command: impl Into<String>) -> Self {
        Self { command: command.into(), grace: KILL_GRACE, jobs: BTreeMap::new(), next_job: 1, quiet: false }
    }

    pub fn with_grace(mut self, grace: Duration) -> Self {
        self.grace = grace;
        self
    }

    /// Discard worker stdout/stderr instead of inheriting them.
    pub fn quiet(mut self, quiet: bool) -> Self {
        self.quiet = quiet;
        self
    }

    fn terminate(child: &Child) {
        let pid = child.id() as libc::pid_t;
        // SAFETY: plain signal delivery to a child we spawned and have not reaped.
        unsafe {
            libc::kill(pid, libc::SIGTERM);
        }
    }
}

impl Scheduler for LocalScheduler {
    fn submit(&mut self, job: &JobSpec) -> Result<SchedulerJob, SchedulerError> {
        let mut cmd = Command::new("sh");
        cmd.arg("-c").arg(&self.command).envs(job.env()).stdin(Stdio::null());
        if self.quiet {
            cmd.stdout(Stdio::null()).stderr(Stdio::null());
        }
        let child = cmd
            .spawn()
            .map_err(|e| SchedulerError::SpawnFailed { trial_id: job.trial_id, detail: e.to_string() })?;
        let job_id = format!("local-{}", self.next_job);
        self.next_job += 1;
        debug!(job_id, trial = job.trial_id, pid = child.id(), "spawned worker");
        self.jobs.insert(
            job_id.clone(),
            LocalJob {
                trial_id: job.trial_id,
                resource_token: job.resource_token.clone(),
                child,
                kill_requested: None,
                hard_killed: false,
            },
        );
        Ok(SchedulerJob {
            job_id,
            trial_id: job.trial_id,
            resource_token: job.resource_token.clone(),
            status: JobStatus::Running,
        })
    }

    fn poll(&mut self) -> Vec<SchedulerJob> {
        let mut done = Vec::new();
        for (job_id, job) in self.jobs.iter_mut() {
            let status = match job.child.try_wait() {
                Ok(Some(exit)) => {
                    if job.kill_requested.is_some() {
                        JobStatus::Killed
                    } else if exit.success() {
                        JobStatus::Finished
                    } else {
                        JobStatus::Failed
                    }
                }
                Ok(None) => {
                    if let Some(at) = job.kill_requested {
                        if !job.hard_killed && at.elapsed() >= self.grace {
                            warn!(job_id, "worker ignored termination signal; killing");
                            let _ = job.child.kill();
                            job.hard_killed = true;
                        }
                    }
                    continue;
                }
                Err(e) => {
                    warn!(job_id, error = %e, "cannot query worker status");
                    JobStatus::Failed
                }
            };
            done.push(SchedulerJob {
                job_id: job_id.clone(),
                trial_id: job.trial_id,
                resource_token: job.resource_token.clone(),
                status,
            });
        }
        for job in &done {
            self.jobs.remove(&job.job_id);
        }
        done
    }

    fn kill(&mut self, job_id: &str) -> Result<(), SchedulerError> {
        let job = self.jobs.get_mut(job_id).ok_or_else(|| SchedulerError::UnknownJob(job_id.to_string()))?;
        if job.kill_requested.is_none() {
            job.kill_requested = Some(Instant::now());
            Self::terminate(&job.child);
        }
        Ok(())
    }

    fn active(&self) -> usize {
        self.jobs.len()
    }
}

impl Drop for LocalScheduler {
    fn drop(&mut self) {
        for job in self.jobs.values_mut() {
            let _ = job.child.kill();
            let _ = job.child.wait();
        }
    }
}

/// Outcome a test or an outside system assigns to an external job.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExternalOutcome {
    Success,
    Failure,
}

#[derive(Default)]
struct ExternalState {
    running: BTreeMap<String, (TrialId, String)>,
    outcomes: BTreeMap<TrialId, ExternalOutcome>,
    submitted: Vec<JobSpec>,
    killed: Vec<TrialId>,
}

/// Jobs run somewhere else (a worker started by hand, or a test acting as
/// one). They stay Running until finished through [`ExternalJobs`] or killed.
#[derive(Clone, Default)]
pub struct ExternalScheduler {
    state: Arc<Mutex<ExternalState>>,
}

/// Handle for finishing external jobs from outside the coordinator.
#[derive(Clone)]
pub struct ExternalJobs {
    state: Arc<Mutex<ExternalState>>,
}

impl ExternalScheduler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn jobs(&self) -> ExternalJobs {
        ExternalJobs { state: Arc::clone(&self.state) }
    }
}

impl ExternalJobs {
    /// Marks the job of `trial_id` as exited; reported on the next poll.
    pub fn finish(&self, trial_id: TrialId, outcome: ExternalOutcome) {
        self.state.lock().expect("scheduler state").outcomes.insert(trial_id, outcome);
    }

    pub fn submitted(&self) -> Vec<JobSpec> {
        self.state.lock().expect("scheduler state").submitted.clone()
    }

    pub fn killed(&self) -> Vec<TrialId> {
        self.state.lock().expect("scheduler state").killed.clone()
    }
}

impl Scheduler for ExternalScheduler {
    fn submit(&mut self, job: &JobSpec) -> Result<SchedulerJob, SchedulerError> {
        let mut state = self.state.lock().expect("scheduler state");
        let job_id = format!("external-{}", job.trial_id);
        state.running.insert(job_id.clone(), (job.trial_id, job.resource_token.clone()));
        state.submitted.push(job.clone());
        Ok(SchedulerJob {
            job_id,
            trial_id: job.trial_id,
            resource_token: job.resource_token.clone(),
            status: JobStatus::Running,
        })
    }

    fn poll(&mut self) -> Vec<SchedulerJob> {
        let mut state = self.state.lock().expect("scheduler state");
        let ExternalState { running, outcomes, killed, .. } = &mut *state;
        let mut done = Vec::new();
        for (job_id, (trial_id, token)) in running.iter() {
            let status = if killed.contains(trial_id) {
                JobStatus::Killed
            } else {
                match outcomes.get(trial_id) {
                    Some(ExternalOutcome::Success) => JobStatus::Finished,
                    Some(ExternalOutcome::Failure) => JobStatus::Failed,
                    None => continue,
                }
            };
            done.push(SchedulerJob {
                job_id: job_id.clone(),
                trial_id: *trial_id,
                resource_token: token.clone(),
                status,
            });
        }
        for job in &done {
            running.remove(&job.job_id);
        }
        done
    }

    fn kill(&mut self, job_id: &str) -> Result<(), SchedulerError> {
        let mut state = self.state.lock().expect("scheduler state");
        let trial_id = state.running.get(job_id).map(|j| j.0).ok_or_else(|| SchedulerError::UnknownJob(job_id.to_string()))?;
        if !state.killed.contains(&trial_id) {
            state.killed.push(trial_id);
        }
        Ok(())
    }

    fn active(&self) -> usize {
        self.state.lock().expect("scheduler state").running.len()
    }
}

/// Templates for driving a batch system through its command line tools.
/// Placeholders: `{command}`, `{trial_id}`, `{resource}`, `{server}` in the
/// submit template and `{job_id}` in the status and kill templates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandTemplates {
    /// Prints the batch job id on stdout.
    pub submit: String,
    /// Prints one of `queued`, `running`, `finished`, `failed`.
    pub status: String,
    pub kill: String,
}

/// Extension point for batch schedulers. Each operation shells out through a
/// template; no particular batch system is assumed.
pub struct CommandTemplateScheduler {
    command: String,
    templates: CommandTemplates,
    jobs: BTreeMap<String, (TrialId, String, bool)>,
}

impl CommandTemplateScheduler {
    pub fn new(command: impl Into<String>, templates: CommandTemplates) -> Self {
        Self { command: command.into(), templates, jobs: BTreeMap::new() }
    }

    fn shell(line: &str, env: &[(&'static str, String)]) -> std::io::Result<std::process::Output> {
        Command::new("sh").arg("-c").arg(line).envs(env.iter().map(|(k, v)| (*k, v.as_str()))).stdin(Stdio::null()).output()
    }
}

impl Scheduler for CommandTemplateScheduler {
    fn submit(&mut self, job: &JobSpec) -> Result<SchedulerJob, SchedulerError> {
        let line = self
            .templates
            .submit
            .replace("{command}", &self.command)
            .replace("{trial_id}", &job.trial_id.to_string())
            .replace("{resource}", &job.resource_token)
            .replace("{server}", &job.server);
        let spawn_failed = |detail: String| SchedulerError::SpawnFailed { trial_id: job.trial_id, detail };
        let out = Self::shell(&line, &job.env()).map_err(|e| spawn_failed(e.to_string()))?;
        if !out.status.success() {
            return Err(spawn_failed(String::from_utf8_lossy(&out.stderr).trim().to_string()));
        }
        let job_id = String::from_utf8_lossy(&out.stdout).trim().to_string();
        if job_id.is_empty() {
            return Err(spawn_failed("submit template printed no job id".into()));
        }
        self.jobs.insert(job_id.clone(), (job.trial_id, job.resource_token.clone(), false));
        Ok(SchedulerJob {
            job_id,
            trial_id: job.trial_id,
            resource_token: job.resource_token.clone(),
            status: JobStatus::Queued,
        })
    }

    fn poll(&mut self) -> Vec<SchedulerJob> {
        let mut done = Vec::new();
        for (job_id, (trial_id, token, killed)) in &self.jobs {
            let line = self.templates.status.replace("{job_id}", job_id);
            let state = match Self::shell(&line, &[]) {
                Ok(out) => String::from_utf8_lossy(&out.stdout).trim().to_ascii_lowercase(),
                Err(e) => {
                    warn!(job_id, error = %e, "status template failed");
                    continue;
                }
            };
            let status = match state.as_str() {
                "finished" if *killed => JobStatus::Killed,
                "failed" if *killed => JobStatus::Killed,
                "finished" => JobStatus::Finished,
                "failed" => JobStatus::Failed,
                _ => continue,
            };
            done.push(SchedulerJob { job_id: job_id.clone(), trial_id: *trial_id, resource_token: token.clone(), status });
        }
        for job in &done {
            self.jobs.remove(&job.job_id);
        }
        done
    }

    fn kill(&mut self, job_id: &str) -> Result<(), SchedulerError> {
        let job = self.jobs.get_mut(job_id).ok_or_else(|| SchedulerError::UnknownJob(job_id.to_string()))?;
        job.2 = true;
        let line = self.templates.kill.replace("{job_id}", job_id);
        Self::shell(&line, &[]).map_err(|e| SchedulerError::Unavailable(e.to_string()))?;
        Ok(())
    }

    fn active(&self) -> usize {
        self.jobs.len()
    }
}
