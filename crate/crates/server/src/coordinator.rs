//! The coordinator task: sole owner of the study and the scheduler. Request
//! handlers reach it through a command queue and read the snapshots it
//! publishes.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use hpo_core::protocol::{MetricsPayload, ResultsDocument, TrialPayload, NON_FINITE_OBJECTIVE};
use hpo_core::results::canonical_json;
use hpo_core::study::{StudyError, Suggest};
use hpo_core::{Study, TrialId, TrialStatus};
use serde::Serialize;
use tokio::sync::{mpsc, oneshot, watch};
use tokio::time::MissedTickBehavior;
use tracing::{debug, info, warn};

use crate::scheduler::{JobSpec, JobStatus, Scheduler};

/// Why the coordinator refused a request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    NotFound,
    /// The trial is terminal and its payload is no longer served.
    Gone,
    Conflict(String),
    BadRequest(String),
    Unavailable,
}

pub(crate) enum Command {
    FetchTrial { id: TrialId, reply: oneshot::Sender<Result<TrialPayload, Rejection>> },
    Observe { id: TrialId, metrics: MetricsPayload, reply: oneshot::Sender<Result<(), Rejection>> },
    Stop { id: TrialId, reply: oneshot::Sender<Result<(), Rejection>> },
}

/// Read-only view published after every change.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    /// Canonical JSON of the results document.
    pub results: Arc<Vec<u8>>,
    pub statuses: BTreeMap<TrialId, TrialStatus>,
    pub stop_requested: BTreeSet<TrialId>,
    pub finished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerAction {
    Acquire,
    Release,
}

/// One resource-token movement, in the order it happened.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerEvent {
    pub action: LedgerAction,
    pub token: String,
    pub trial_id: TrialId,
}

/// Exclusive resource tokens plus the concurrency cap.
#[derive(Debug, Clone)]
pub struct ResourcePool {
    tokens: Vec<String>,
    max_concurrent: usize,
    held: BTreeMap<String, TrialId>,
    ledger: Vec<LedgerEvent>,
}

impl ResourcePool {
    /// With no declared resources, tokens `"0".."max_concurrent-1"` are used.
    pub fn new(resources: &[String], max_concurrent: usize) -> Self {
        let tokens = if resources.is_empty() {
            (0..max_concurrent).map(|i| i.to_string()).collect()
        } else {
            resources.to_vec()
        };
        Self { tokens, max_concurrent, held: BTreeMap::new(), ledger: Vec::new() }
    }

    pub fn has_capacity(&self) -> bool {
        self.held.len() < self.max_concurrent && self.held.len() < self.tokens.len()
    }

    pub fn acquire(&mut self, trial_id: TrialId) -> Option<String> {
        if !self.has_capacity() {
            return None;
        }
        let token = self.tokens.iter().find(|t| !self.held.contains_key(*t))?.clone();
        self.held.insert(token.clone(), trial_id);
        self.ledger.push(LedgerEvent { action: LedgerAction::Acquire, token: token.clone(), trial_id });
        Some(token)
    }

    pub fn release(&mut self, token: &str) {
        if let Some(trial_id) = self.held.remove(token) {
            self.ledger.push(LedgerEvent { action: LedgerAction::Release, token: token.to_string(), trial_id });
        }
    }

    pub fn in_use(&self) -> usize {
        self.held.len()
    }

    pub fn ledger(&self) -> &[LedgerEvent] {
        &self.ledger
    }
}

#[derive(Debug, Clone)]
pub struct CoordinatorConfig {
    pub poll_interval: Duration,
    pub trial_timeout: Option<Duration>,
    /// Address workers use to reach the server.
    pub server: String,
}

struct ActiveJob {
    job_id: String,
    token: String,
    started: Instant,
    timed_out: bool,
}

/// Everything left when a run ends.
#[derive(Debug)]
pub struct RunReport {
    pub study: Study,
    pub ledger: Vec<LedgerEvent>,
    /// Largest number of simultaneously running jobs.
    pub max_running: usize,
    /// Observations acknowledged to workers.
    pub acknowledged: u64,
    /// Final status of every job, in the order jobs ended.
    pub jobs: Vec<(TrialId, JobStatus)>,
}

pub(crate) struct Coordinator {
    study: Study,
    scheduler: Box<dyn Scheduler>,
    pool: ResourcePool,
    config: CoordinatorConfig,
    jobs: BTreeMap<TrialId, ActiveJob>,
    stop_requested: BTreeSet<TrialId>,
    exhausted: bool,
    max_running: usize,
    acknowledged: u64,
    ended: Vec<(TrialId, JobStatus)>,
    snapshot: watch::Sender<Arc<Snapshot>>,
    dirty: bool,
}

impl Coordinator {
    pub(crate) fn new(
        study: Study,
        scheduler: Box<dyn Scheduler>,
        pool: ResourcePool,
        config: CoordinatorConfig,
    ) -> (Self, watch::Receiver<Arc<Snapshot>>) {
        let (tx, rx) = watch::channel(Arc::new(Snapshot::default()));
        let mut coordinator = Self {
            study,
            scheduler,
            pool,
            config,
            jobs: BTreeMap::new(),
            stop_requested: BTreeSet::new(),
            exhausted: false,
            max_running: 0,
            acknowledged: 0,
            ended: Vec::new(),
            snapshot: tx,
            dirty: true,
        };
        coordinator.publish(false);
        (coordinator, rx)
    }

    pub(crate) async fn run(mut self, mut inbox: mpsc::Receiver<Command>) -> RunReport {
        let mut ticker = tokio::time::interval(self.config.poll_interval);
        ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                Some(command) = inbox.recv() => self.handle(command),
                _ = ticker.tick() => {
                    self.step();
                    if self.exhausted && self.jobs.is_empty() {
                        break;
                    }
                }
            }
            self.publish_if_dirty();
        }
        // answer anything already queued before going away
        while let Ok(command) = inbox.try_recv() {
            self.handle(command);
        }
        self.publish(true);
        info!(trials = self.study.history().len(), "optimization finished");
        RunReport {
            ledger: self.pool.ledger().to_vec(),
            study: self.study,
            max_running: self.max_running,
            acknowledged: self.acknowledged,
            jobs: self.ended,
        }
    }

    fn publish(&mut self, finished: bool) {
        let document = ResultsDocument::from_study(&self.study);
        let snapshot = Snapshot {
            results: Arc::new(canonical_json(&document).into_bytes()),
            statuses: self.study.history().iter().map(|r| (r.trial.id, r.status)).collect(),
            stop_requested: self.stop_requested.clone(),
            finished,
        };
        self.snapshot.send_replace(Arc::new(snapshot));
        self.dirty = false;
    }

    fn step(&mut self) {
        self.reap();
        self.enforce_timeouts();
        self.submit();
        self.max_running = self.max_running.max(self.jobs.len());
    }

    fn reap(&mut self) {
        for job in self.scheduler.poll() {
            if !job.status.is_terminal() {
                continue;
            }
            let Some(active) = self.jobs.remove(&job.trial_id) else {
                warn!(job = job.job_id, "poll reported an unknown job");
                continue;
            };
            self.pool.release(&active.token);
            self.ended.push((job.trial_id, job.status));
            self.dirty = true;
            let still_live = self.study.trial(job.trial_id).is_some_and(|r| !r.status.is_terminal());
            if still_live {
                match self.study.finalize(job.trial_id) {
                    Ok(status) => debug!(trial = job.trial_id, ?status, job_status = ?job.status, "trial finalized"),
                    Err(e) => warn!(trial = job.trial_id, error = %e, "finalize failed"),
                }
            }
        }
    }

    fn enforce_timeouts(&mut self) {
        let Some(limit) = self.config.trial_timeout else { return };
        for (trial_id, job) in self.jobs.iter_mut() {
            if !job.timed_out && job.started.elapsed() >= limit {
                info!(trial = trial_id, "trial exceeded its time limit; killing");
                job.timed_out = true;
                if let Err(e) = self.scheduler.kill(&job.job_id) {
                    warn!(trial = trial_id, error = %e, "kill failed");
                }
            }
        }
    }

    fn submit(&mut self) {
        while !self.exhausted && self.pool.has_capacity() {
            let trial = match self.study.get_suggestion() {
                Ok(Suggest::Trial(trial)) => trial,
                Ok(Suggest::Done) => {
                    self.exhausted = true;
                    break;
                }
                Err(e) => {
                    if self.jobs.is_empty() {
                        // nothing running can unblock the algorithm
                        warn!(error = %e, "algorithm cannot continue; ending the run");
                        self.exhausted = true;
                    } else if !e.is_wait() {
                        warn!(error = %e, "algorithm failure");
                    }
                    break;
                }
            };
            self.dirty = true;
            let token = self.pool.acquire(trial.id).expect("capacity checked");
            let spec = JobSpec { trial_id: trial.id, resource_token: token.clone(), server: self.config.server.clone() };
            match self.scheduler.submit(&spec) {
                Ok(job) => {
                    debug!(trial = trial.id, token, job = job.job_id, "job submitted");
                    self.jobs.insert(
                        trial.id,
                        ActiveJob { job_id: job.job_id, token, started: Instant::now(), timed_out: false },
                    );
                }
                Err(e) => {
                    warn!(trial = trial.id, error = %e, "job submission failed");
                    self.pool.release(&token);
                    self.ended.push((trial.id, JobStatus::Failed));
                    let _ = self.study.finalize(trial.id);
                }
            }
        }
    }

    /// Applies a command and publishes the new snapshot before replying, so a
    /// caller that got an acknowledgment always reads its own write.
    fn handle(&mut self, command: Command) {
        match command {
            Command::FetchTrial { id, reply } => {
                let result = self.fetch(id);
                self.publish_if_dirty();
                let _ = reply.send(result);
            }
            Command::Observe { id, metrics, reply } => {
                let result = self.observe(id, metrics);
                self.publish_if_dirty();
                let _ = reply.send(result);
            }
            Command::Stop { id, reply } => {
                let result = self.stop(id);
                self.publish_if_dirty();
                let _ = reply.send(result);
            }
        }
    }

    fn publish_if_dirty(&mut self) {
        if self.dirty {
            self.publish(false);
        }
    }

    fn fetch(&mut self, id: TrialId) -> Result<TrialPayload, Rejection> {
        let record = self.study.trial(id).ok_or(Rejection::NotFound)?;
        if record.status.is_terminal() {
            return Err(Rejection::Gone);
        }
        let payload = TrialPayload::from_trial(&record.trial);
        if record.status == TrialStatus::Issued {
            self.study.mark_running(id).map_err(study_rejection)?;
            self.dirty = true;
        }
        Ok(payload)
    }

    fn observe(&mut self, id: TrialId, metrics: MetricsPayload) -> Result<(), Rejection> {
        if metrics.trial_id != id {
            return Err(Rejection::BadRequest(format!("trial_id {} does not match the path", metrics.trial_id)));
        }
        self.study
            .add_observation(id, metrics.iteration, metrics.objective.0, metrics.context)
            .map_err(study_rejection)?;
        self.acknowledged += 1;
        self.dirty = true;
        Ok(())
    }

    fn stop(&mut self, id: TrialId) -> Result<(), Rejection> {
        let status = self.study.trial(id).ok_or(Rejection::NotFound)?.status;
        match status {
            TrialStatus::Stopped => return Ok(()),
            TrialStatus::Completed | TrialStatus::Failed => {
                return Err(Rejection::Conflict(format!("trial {id} is already {status:?}").to_lowercase()))
            }
            TrialStatus::Issued | TrialStatus::Running => {}
        }
        self.stop_requested.insert(id);
        self.study.stop(id).map_err(study_rejection)?;
        if let Some(job) = self.jobs.get(&id) {
            if let Err(e) = self.scheduler.kill(&job.job_id) {
                warn!(trial = id, error = %e, "kill failed");
            }
        }
        info!(trial = id, "trial stopped on request");
        self.dirty = true;
        Ok(())
    }
}

fn study_rejection(e: StudyError) -> Rejection {
    match e {
        StudyError::UnknownTrial(_) => Rejection::NotFound,
        StudyError::TrialAlreadyFinalized(id) | StudyError::DoubleFinalize(id) => {
            Rejection::Conflict(format!("trial {id} is terminal"))
        }
        StudyError::InvalidObservation(reason) if reason == NON_FINITE_OBJECTIVE => {
            Rejection::BadRequest(NON_FINITE_OBJECTIVE.to_string())
        }
        StudyError::InvalidObservation(reason) => Rejection::BadRequest(reason.to_string()),
        other => Rejection::BadRequest(other.to_string()),
    }
}
