use std::any::Any;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{default_perturbation_factors, scale_value, Algorithm, AlgorithmError, Next, SuggestContext};
use crate::space::{Assignment, Domain, ParameterDef, ParameterValue, SearchSpace};
use crate::study::{Suggestion, TrialStatus};
use crate::{StudyRng, TrialId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalSearchOptions {
    /// Starting assignment, one JSON scalar per parameter.
    pub seed_configuration: serde_json::Map<String, Value>,
    #[serde(default = "default_perturbation_factors")]
    pub perturbation_factors: Vec<f64>,
    #[serde(default)]
    pub max_num_trials: Option<usize>,
}

/// Hill climbing from a seed assignment, one parameter perturbed per step.
#[derive(Debug, Clone)]
pub struct LocalSearch {
    seed: Assignment,
    /// Loss (lower is better) of the current seed once known.
    seed_loss: Option<f64>,
    seed_trial: Option<TrialId>,
    factors: Vec<f64>,
    max_num_trials: Option<usize>,
    issued: usize,
    outstanding: BTreeMap<TrialId, Assignment>,
    trajectory: Vec<f64>,
}

impl LocalSearch {
    pub fn new(options: LocalSearchOptions, space: &SearchSpace, _lower_is_better: bool) -> Result<Self, AlgorithmError> {
        let seed = space
            .assignment_from_json(&options.seed_configuration)
            .map_err(AlgorithmError::SeedOutOfRange)?;
        Self::from_assignment(seed, options.perturbation_factors, options.max_num_trials, space)
    }

    pub fn from_assignment(
        seed: Assignment,
        factors: Vec<f64>,
        max_num_trials: Option<usize>,
        space: &SearchSpace,
    ) -> Result<Self, AlgorithmError> {
        space.check(&seed).map_err(AlgorithmError::SeedOutOfRange)?;
        if factors.is_empty() || factors.iter().any(|f| !f.is_finite() || *f <= 0.0) {
            return Err(AlgorithmError::InvalidOptions("perturbation factors must be positive and non-empty".into()));
        }
        Ok(Self {
            seed,
            seed_loss: None,
            seed_trial: None,
            factors,
            max_num_trials,
            issued: 0,
            outstanding: BTreeMap::new(),
            trajectory: Vec::new(),
        })
    }

    pub fn seed(&self) -> &Assignment {
        &self.seed
    }

    /// Every loss the seed has held, in order (lower is better).
    pub fn seed_trajectory(&self) -> &[f64] {
        &self.trajectory
    }

    fn absorb(&mut self, ctx: &SuggestContext<'_>) {
        if let (Some(id), None) = (self.seed_trial, self.seed_loss) {
            if let Some(record) = ctx.history.get(id) {
                if record.status == TrialStatus::Completed {
                    if let Some(obj) = record.final_objective {
                        self.seed_loss = Some(ctx.loss(obj));
                        self.trajectory.push(ctx.loss(obj));
                    }
                }
            }
        }
        let finished: Vec<TrialId> = self
            .outstanding
            .keys()
            .copied()
            .filter(|id| ctx.history.get(*id).is_some_and(|r| r.status.is_terminal()))
            .collect();
        for id in finished {
            let candidate = self.outstanding.remove(&id).expect("listed above");
            let record = ctx.history.get(id).expect("filtered above");
            let Some(obj) = record.final_objective.filter(|_| record.status == TrialStatus::Completed) else {
                continue;
            };
            let loss = ctx.loss(obj);
            if self.seed_loss.is_none_or(|seed| loss < seed) {
                self.seed = candidate;
                self.seed_loss = Some(loss);
                self.trajectory.push(loss);
            }
        }
    }
}

/// Changes exactly one uniformly chosen parameter of `seed`.
pub(crate) fn perturb_one(space: &SearchSpace, seed: &Assignment, factors: &[f64], rng: &mut StudyRng) -> Assignment {
    let mut out = seed.clone();
    if space.is_empty() {
        return out;
    }
    let def = &space.defs()[rng.gen_range(0..space.len())];
    let current = &seed[&def.name];
    out.insert(def.name.clone(), perturb_value(def, current, factors, rng));
    out
}

fn perturb_value(def: &ParameterDef, current: &ParameterValue, factors: &[f64], rng: &mut StudyRng) -> ParameterValue {
    match &def.domain {
        Domain::Continuous { .. } | Domain::ContinuousLog { .. } | Domain::Discrete { .. } => {
            let factor = *factors.choose(rng).expect("non-empty factors");
            scale_value(def, current, factor)
        }
        Domain::Choice(cats) => {
            let others: Vec<_> = cats
                .iter()
                .filter(|c| !matches!(current, ParameterValue::Category(cur) if cur == *c))
                .collect();
            match others.choose(rng) {
                Some(c) => ParameterValue::Category((*c).clone()),
                None => current.clone(),
            }
        }
        Domain::Ordinal(cats) => {
            let ParameterValue::Category(cur) = current else { return current.clone() };
            let idx = def.category_index(cur).unwrap_or(0) as i64;
            let step = if rng.gen_bool(0.5) { 1 } else { -1 };
            let moved = (idx + step).clamp(0, cats.len() as i64 - 1) as usize;
            ParameterValue::Category(cats[moved].clone())
        }
    }
}

impl Algorithm for LocalSearch {
    fn name(&self) -> &'static str {
        "local_search"
    }

    fn next(&mut self, ctx: &mut SuggestContext<'_>) -> Result<Next, AlgorithmError> {
        self.absorb(ctx);
        if self.max_num_trials.is_some_and(|max| self.issued >= max) {
            return Ok(Next::Exhausted);
        }
        self.issued += 1;
        if self.seed_trial.is_none() {
            self.seed_trial = Some(ctx.next_id);
            return Ok(Next::Suggest(Suggestion::plain(self.seed.clone())));
        }
        let candidate = perturb_one(ctx.space, &self.seed, &self.factors, ctx.rng);
        self.outstanding.insert(ctx.next_id, candidate.clone());
        Ok(Next::Suggest(Suggestion::plain(candidate)))
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
