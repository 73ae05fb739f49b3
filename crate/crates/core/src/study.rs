//! The study state machine: issues trials from an algorithm, records
//! observations, finalizes trials and answers best-result queries.

use std::collections::BTreeMap;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::algorithm::{self, Algorithm, AlgorithmError, AlgorithmSpec, Next, SuggestContext};
use crate::results::{canonical_json, ResultRow, ResultsTable, RowStatus};
use crate::space::{Assignment, ParameterDef, SearchSpace, SpaceError};
use crate::{StudyRng, TrialId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrialStatus {
    Issued,
    Running,
    Completed,
    Failed,
    Stopped,
}

impl TrialStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, TrialStatus::Completed | TrialStatus::Failed | TrialStatus::Stopped)
    }
}

/// Framework-owned keys travelling with a trial (checkpoint identifiers and
/// resource budget for multi-fidelity algorithms).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Reserved {
    pub load_from: Option<String>,
    pub save_to: Option<String>,
    pub budget: Option<u64>,
}

impl Reserved {
    pub fn is_empty(&self) -> bool {
        self.load_from.is_none() && self.save_to.is_none() && self.budget.is_none()
    }
}

/// What an algorithm proposes; the study turns it into a [`Trial`].
#[derive(Debug, Clone, PartialEq)]
pub struct Suggestion {
    pub parameters: Assignment,
    pub reserved: Reserved,
}

impl Suggestion {
    pub fn plain(parameters: Assignment) -> Self {
        Self { parameters, reserved: Reserved::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub id: TrialId,
    pub parameters: Assignment,
    pub reserved: Reserved,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub trial_id: TrialId,
    pub iteration: u64,
    pub objective: f64,
    pub context: BTreeMap<String, f64>,
}

/// Per-trial state kept by the study.
#[derive(Debug, Clone)]
pub struct TrialRecord {
    pub trial: Trial,
    pub status: TrialStatus,
    pub observations: Vec<Observation>,
    pub final_objective: Option<f64>,
    pub non_monotonic: bool,
}

impl TrialRecord {
    /// Objective of the highest-iteration observation; the latest one wins ties.
    pub fn last_objective(&self) -> Option<f64> {
        let mut best: Option<&Observation> = None;
        for obs in &self.observations {
            if best.is_none_or(|b| obs.iteration >= b.iteration) {
                best = Some(obs);
            }
        }
        best.map(|o| o.objective)
    }

    fn last_iteration(&self) -> Option<u64> {
        self.observations.iter().map(|o| o.iteration).max()
    }
}

#[derive(Debug, Error)]
pub enum StudyError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error("algorithm failure: {0}")]
    Algorithm(#[from] AlgorithmError),
    #[error("unknown trial {0}")]
    UnknownTrial(TrialId),
    #[error("trial {0} is already finalized")]
    TrialAlreadyFinalized(TrialId),
    #[error("trial {0} was finalized twice")]
    DoubleFinalize(TrialId),
    #[error("trial {0} already exists")]
    DuplicateTrial(TrialId),
    #[error("observation rejected: {0}")]
    InvalidObservation(&'static str),
}

impl StudyError {
    /// True when the algorithm cannot suggest until outstanding trials finish.
    pub fn is_wait(&self) -> bool {
        matches!(self, StudyError::Algorithm(e) if e.is_wait())
    }
}

/// Outcome of a successful `add_observation`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationOutcome {
    Recorded,
    /// Stored, but the iteration went backwards.
    NonMonotonicIteration,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Suggest {
    Trial(Trial),
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResult {
    pub trial_id: TrialId,
    pub parameters: Assignment,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub parameters: Vec<ParameterDef>,
    pub algorithm: AlgorithmSpec,
    #[serde(default = "default_lower_is_better")]
    pub lower_is_better: bool,
}

fn default_lower_is_better() -> bool {
    true
}

/// Read-only view of all trials handed to algorithms.
#[derive(Debug, Clone, Default)]
pub struct History {
    trials: BTreeMap<TrialId, TrialRecord>,
}

impl History {
    pub fn get(&self, id: TrialId) -> Option<&TrialRecord> {
        self.trials.get(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &TrialRecord> {
        self.trials.values()
    }

    /// Completed trials in id order with their final objectives.
    pub fn completed(&self) -> impl Iterator<Item = (&TrialRecord, f64)> {
        self.trials
            .values()
            .filter(|t| t.status == TrialStatus::Completed)
            .filter_map(|t| t.final_objective.map(|o| (t, o)))
    }

    pub fn completed_count(&self) -> usize {
        self.completed().count()
    }

    pub fn pending_count(&self) -> usize {
        self.trials.values().filter(|t| !t.status.is_terminal()).count()
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }
}

pub struct Study {
    space: SearchSpace,
    lower_is_better: bool,
    algorithm: Box<dyn Algorithm>,
    mean_over_repeats: bool,
    rng: StudyRng,
    history: History,
    results: ResultsTable,
    next_id: TrialId,
}

impl std::fmt::Debug for Study {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Study")
            .field("algorithm", &self.algorithm.name())
            .field("lower_is_better", &self.lower_is_better)
            .field("trials", &self.history.len())
            .field("rows", &self.results.len())
            .finish()
    }
}

impl Study {
    /// Builds a study from its declarative config. All randomness derives from `seed`.
    pub fn new(config: StudyConfig, seed: u64) -> Result<Self, StudyError> {
        let space = SearchSpace::new(config.parameters)?;
        let algorithm = algorithm::build(&config.algorithm, &space, config.lower_is_better)?;
        Ok(Self::with_algorithm(space, algorithm, config.lower_is_better, seed))
    }

    pub fn with_algorithm(space: SearchSpace, algorithm: Box<dyn Algorithm>, lower_is_better: bool, seed: u64) -> Self {
        let mut rng = StudyRng::seed_from_u64(seed);
        rng.set_stream(1);
        let mean_over_repeats = algorithm.repeats().is_some_and(|k| k > 1);
        Self {
            space,
            lower_is_better,
            algorithm,
            mean_over_repeats,
            rng,
            history: History::default(),
            results: ResultsTable::new(),
            next_id: 1,
        }
    }

    /// Rebuilds a study by replaying results rows in order. The replayed study
    /// has no algorithm; it answers status and best-result queries.
    pub fn replay(space: SearchSpace, lower_is_better: bool, mean_over_repeats: bool, rows: &[ResultRow]) -> Result<Self, StudyError> {
        let mut study = Self::with_algorithm(space, Box::new(algorithm::Replay), lower_is_better, 0);
        study.mean_over_repeats = mean_over_repeats;
        for row in rows {
            if study.history.get(row.trial_id).is_none() {
                study.register(Trial { id: row.trial_id, parameters: row.parameters.clone(), reserved: Reserved::default() })?;
            }
            match row.status {
                RowStatus::Intermediate => {
                    let objective = row.objective.ok_or(StudyError::InvalidObservation("missing objective"))?;
                    study.add_observation(row.trial_id, row.iteration.unwrap_or(0), objective, row.context.clone())?;
                }
                RowStatus::Completed | RowStatus::Failed => {
                    study.finalize(row.trial_id)?;
                }
                RowStatus::Stopped => study.stop(row.trial_id)?,
            }
        }
        Ok(study)
    }

    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn lower_is_better(&self) -> bool {
        self.lower_is_better
    }

    pub fn algorithm_name(&self) -> &'static str {
        self.algorithm.name()
    }

    pub fn algorithm(&self) -> &dyn Algorithm {
        self.algorithm.as_ref()
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn results(&self) -> &ResultsTable {
        &self.results
    }

    pub fn trial(&self, id: TrialId) -> Option<&TrialRecord> {
        self.history.get(id)
    }

    /// Asks the algorithm for the next trial. On `Suggest::Done` the study is
    /// exhausted; errors leave the study usable.
    pub fn get_suggestion(&mut self) -> Result<Suggest, StudyError> {
        let mut ctx = SuggestContext {
            space: &self.space,
            history: &self.history,
            lower_is_better: self.lower_is_better,
            next_id: self.next_id,
            rng: &mut self.rng,
        };
        match self.algorithm.next(&mut ctx)? {
            Next::Exhausted => Ok(Suggest::Done),
            Next::Suggest(s) => {
                self.space.check(&s.parameters)?;
                let trial = Trial { id: self.next_id, parameters: s.parameters, reserved: s.reserved };
                self.register(trial.clone())?;
                Ok(Suggest::Trial(trial))
            }
        }
    }

    /// `get_suggestion` flattened for `while let Some(trial) = study.next_trial()?` loops.
    pub fn next_trial(&mut self) -> Result<Option<Trial>, StudyError> {
        Ok(match self.get_suggestion()? {
            Suggest::Trial(t) => Some(t),
            Suggest::Done => None,
        })
    }

    fn register(&mut self, trial: Trial) -> Result<(), StudyError> {
        if self.history.trials.contains_key(&trial.id) {
            return Err(StudyError::DuplicateTrial(trial.id));
        }
        self.next_id = self.next_id.max(trial.id + 1);
        self.history.trials.insert(
            trial.id,
            TrialRecord { trial, status: TrialStatus::Issued, observations: Vec::new(), final_objective: None, non_monotonic: false },
        );
        Ok(())
    }

    fn live_record(&mut self, id: TrialId) -> Result<&mut TrialRecord, StudyError> {
        let record = self.history.trials.get_mut(&id).ok_or(StudyError::UnknownTrial(id))?;
        if record.status.is_terminal() {
            return Err(StudyError::TrialAlreadyFinalized(id));
        }
        Ok(record)
    }

    /// Issued → Running. No-op when already running.
    pub fn mark_running(&mut self, id: TrialId) -> Result<(), StudyError> {
        let record = self.live_record(id)?;
        record.status = TrialStatus::Running;
        Ok(())
    }

    pub fn add_observation(
        &mut self,
        id: TrialId,
        iteration: u64,
        objective: f64,
        context: BTreeMap<String, f64>,
    ) -> Result<ObservationOutcome, StudyError> {
        if !objective.is_finite() {
            // still report unknown/terminal trials first
            self.live_record(id)?;
            return Err(StudyError::InvalidObservation("non-finite objective"));
        }
        if context.values().any(|v| !v.is_finite()) {
            self.live_record(id)?;
            return Err(StudyError::InvalidObservation("non-finite context value"));
        }
        let record = self.live_record(id)?;
        record.status = TrialStatus::Running;
        let outcome = match record.last_iteration() {
            Some(last) if iteration < last => {
                record.non_monotonic = true;
                warn!(trial = id, iteration, last, "non-monotonic iteration");
                ObservationOutcome::NonMonotonicIteration
            }
            _ => ObservationOutcome::Recorded,
        };
        record.observations.push(Observation { trial_id: id, iteration, objective, context: context.clone() });
        let parameters = record.trial.parameters.clone();
        self.results.push(ResultRow {
            trial_id: id,
            parameters,
            status: RowStatus::Intermediate,
            iteration: Some(iteration),
            objective: Some(objective),
            context,
        });
        Ok(outcome)
    }

    /// Writes the terminal row: Completed with the last-iteration objective,
    /// or Failed when the trial has no valid observations.
    pub fn finalize(&mut self, id: TrialId) -> Result<TrialStatus, StudyError> {
        let record = self.history.trials.get_mut(&id).ok_or(StudyError::UnknownTrial(id))?;
        if record.status.is_terminal() {
            return Err(StudyError::DoubleFinalize(id));
        }
        let final_objective = record.last_objective();
        let (status, row_status) = match final_objective {
            Some(_) => (TrialStatus::Completed, RowStatus::Completed),
            None => (TrialStatus::Failed, RowStatus::Failed),
        };
        record.status = status;
        record.final_objective = final_objective;
        let row = ResultRow {
            trial_id: id,
            parameters: record.trial.parameters.clone(),
            status: row_status,
            iteration: record.last_iteration(),
            objective: final_objective,
            context: last_context(record),
        };
        self.results.push(row);
        Ok(status)
    }

    /// Human-driven termination: status Stopped, observations retained.
    pub fn stop(&mut self, id: TrialId) -> Result<(), StudyError> {
        let record = self.live_record(id)?;
        record.status = TrialStatus::Stopped;
        let row = ResultRow {
            trial_id: id,
            parameters: record.trial.parameters.clone(),
            status: RowStatus::Stopped,
            iteration: record.last_iteration(),
            objective: record.last_objective(),
            context: last_context(record),
        };
        self.results.push(row);
        Ok(())
    }

    fn better(&self, a: f64, b: f64) -> bool {
        if self.lower_is_better {
            a < b
        } else {
            a > b
        }
    }

    /// Best completed trial; ties go to the lowest trial id. Under a repeating
    /// algorithm the key is the mean final objective over repeats of the same
    /// assignment.
    pub fn best_result(&self) -> Option<BestResult> {
        if self.mean_over_repeats {
            return self.best_mean_result();
        }
        let mut best: Option<(&TrialRecord, f64)> = None;
        for (record, objective) in self.history.completed() {
            if best.is_none_or(|(_, b)| self.better(objective, b)) {
                best = Some((record, objective));
            }
        }
        best.map(|(record, objective)| BestResult {
            trial_id: record.trial.id,
            parameters: record.trial.parameters.clone(),
            objective,
        })
    }

    fn best_mean_result(&self) -> Option<BestResult> {
        // key → (first completed trial id, sum, count); completed() is id-ordered
        let mut groups: BTreeMap<String, (TrialId, f64, usize)> = BTreeMap::new();
        for (record, objective) in self.history.completed() {
            let key = canonical_json(&record.trial.parameters);
            let entry = groups.entry(key).or_insert((record.trial.id, 0.0, 0));
            entry.1 += objective;
            entry.2 += 1;
        }
        let mut ordered: Vec<(TrialId, f64)> = groups.values().map(|&(id, sum, n)| (id, sum / n as f64)).collect();
        ordered.sort_by_key(|&(id, _)| id);
        let mut best: Option<(TrialId, f64)> = None;
        for (id, mean) in ordered {
            if best.is_none_or(|(_, b)| self.better(mean, b)) {
                best = Some((id, mean));
            }
        }
        best.map(|(trial_id, objective)| BestResult {
            trial_id,
            parameters: self.history.trials[&trial_id].trial.parameters.clone(),
            objective,
        })
    }
}

fn last_context(record: &TrialRecord) -> BTreeMap<String, f64> {
    let mut best: Option<&Observation> = None;
    for obs in &record.observations {
        if best.is_none_or(|b| obs.iteration >= b.iteration) {
            best = Some(obs);
        }
    }
    best.map(|o| o.context.clone()).unwrap_or_default()
}
