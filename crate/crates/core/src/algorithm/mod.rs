//! Suggestion engines. Every algorithm sees the search space, a read-only view
//! of all trials so far and the study's random stream, and returns the next
//! suggestion or `Exhausted`.

use std::any::Any;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::space::{SearchSpace, SpaceError};
use crate::study::{History, Suggestion};
use crate::{StudyRng, TrialId};

mod asha;
mod bayes;
mod grid;
mod local;
mod pbt;
mod random;
mod repeat;

pub use asha::{AshaOptions, SuccessiveHalving};
pub use bayes::{BayesOptOptions, BayesianOptimization};
pub use grid::{GridSearch, GridSearchOptions};
pub use local::{LocalSearch, LocalSearchOptions};
pub use pbt::{LineageEntry, PbtOptions, PopulationBasedTraining};
pub use random::{RandomSearch, RandomSearchOptions};
pub use repeat::{Repeat, RepeatOptions};

pub struct SuggestContext<'a> {
    pub space: &'a SearchSpace,
    pub history: &'a History,
    pub lower_is_better: bool,
    /// Id the study will assign to the suggestion returned now.
    pub next_id: TrialId,
    pub rng: &'a mut StudyRng,
}

impl SuggestContext<'_> {
    /// Maps an objective so that smaller is always better.
    pub fn loss(&self, objective: f64) -> f64 {
        if self.lower_is_better {
            objective
        } else {
            -objective
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Next {
    Suggest(Suggestion),
    Exhausted,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlgorithmError {
    #[error("grid has {size} points, more than the cap of {cap}")]
    GridTooLarge { size: u128, cap: u64 },
    #[error("local search seed is invalid: {0}")]
    SeedOutOfRange(SpaceError),
    #[error("budget {budget} is not on the rung ladder")]
    UnknownRung { budget: u64 },
    #[error("the previous generation has unfinished members")]
    PopulationIncomplete,
    #[error("waiting for outstanding trials before the next suggestion")]
    AwaitingResults,
    #[error("invalid algorithm options: {0}")]
    InvalidOptions(String),
}

impl AlgorithmError {
    pub fn is_wait(&self) -> bool {
        matches!(self, AlgorithmError::PopulationIncomplete | AlgorithmError::AwaitingResults)
    }
}

pub trait Algorithm: Send {
    fn name(&self) -> &'static str;

    fn next(&mut self, ctx: &mut SuggestContext<'_>) -> Result<Next, AlgorithmError>;

    /// Number of consecutive repeats per assignment, for wrappers that repeat.
    fn repeats(&self) -> Option<usize> {
        None
    }

    /// For downcasting to the concrete algorithm to inspect its state.
    fn as_any(&self) -> &dyn Any;
}

/// Declarative algorithm choice, as written in config files:
/// `{"name": "random_search", "options": {"max_num_trials": 50}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "options", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    RandomSearch(RandomSearchOptions),
    GridSearch(GridSearchOptions),
    LocalSearch(LocalSearchOptions),
    #[serde(alias = "gpyopt")]
    BayesianOptimization(BayesOptOptions),
    #[serde(alias = "asha")]
    SuccessiveHalving(AshaOptions),
    #[serde(alias = "pbt")]
    PopulationBasedTraining(PbtOptions),
    Repeat(RepeatOptions),
}

pub fn build(spec: &AlgorithmSpec, space: &SearchSpace, lower_is_better: bool) -> Result<Box<dyn Algorithm>, AlgorithmError> {
    Ok(match spec {
        AlgorithmSpec::RandomSearch(o) => Box::new(RandomSearch::new(o.clone())),
        AlgorithmSpec::GridSearch(o) => Box::new(GridSearch::new(o.clone(), space)?),
        AlgorithmSpec::LocalSearch(o) => Box::new(LocalSearch::new(o.clone(), space, lower_is_better)?),
        AlgorithmSpec::BayesianOptimization(o) => Box::new(BayesianOptimization::new(o.clone())),
        AlgorithmSpec::SuccessiveHalving(o) => Box::new(SuccessiveHalving::new(o.clone())?),
        AlgorithmSpec::PopulationBasedTraining(o) => Box::new(PopulationBasedTraining::new(o.clone())?),
        AlgorithmSpec::Repeat(o) => {
            if o.k == 0 {
                return Err(AlgorithmError::InvalidOptions("repeat count k must be at least 1".into()));
            }
            Box::new(Repeat::new(build(&o.inner, space, lower_is_better)?, o.k))
        }
    })
}

/// Never suggests anything; used for studies rebuilt from results.
pub(crate) struct Replay;

impl Algorithm for Replay {
    fn name(&self) -> &'static str {
        "replay"
    }

    fn next(&mut self, _ctx: &mut SuggestContext<'_>) -> Result<Next, AlgorithmError> {
        Ok(Next::Exhausted)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

pub(crate) fn default_perturbation_factors() -> Vec<f64> {
    vec![0.8, 1.2]
}

/// Multiplies a numeric value by `factor` and clips (and rounds) to its range.
pub(crate) fn scale_value(
    def: &crate::space::ParameterDef,
    value: &crate::space::ParameterValue,
    factor: f64,
) -> crate::space::ParameterValue {
    use crate::space::{Domain, ParameterValue};
    match (&def.domain, value) {
        (Domain::Continuous { lo, hi } | Domain::ContinuousLog { lo, hi }, ParameterValue::Float(v)) => {
            ParameterValue::Float((v * factor).clamp(*lo, *hi))
        }
        (Domain::Discrete { lo, hi }, ParameterValue::Int(v)) => {
            ParameterValue::Int(((*v as f64 * factor).round() as i64).clamp(*lo, *hi))
        }
        _ => value.clone(),
    }
}
