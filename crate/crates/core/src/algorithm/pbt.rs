//! Population based training. Each generation trains every member for a fixed
//! number of iterations; between generations the worst members copy the
//! weights and hyperparameters of a strong member and perturb them.

use std::any::Any;
use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{default_perturbation_factors, scale_value, Algorithm, AlgorithmError, Next, SuggestContext};
use crate::space::{Assignment, Domain, ParameterValue, SearchSpace};
use crate::study::{Reserved, Suggestion, TrialStatus};
use crate::{StudyRng, TrialId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PbtOptions {
    pub population_size: usize,
    pub num_generations: usize,
    /// Iterations each member trains per generation.
    pub generation_length: u64,
    /// Fraction of the population replaced (and copied from) each generation.
    pub truncation: f64,
    pub perturbation_factors: Vec<f64>,
    /// Probability that exploring resamples a categorical parameter.
    pub resample_probability: f64,
}

impl Default for PbtOptions {
    fn default() -> Self {
        Self {
            population_size: 10,
            num_generations: 5,
            generation_length: 1,
            truncation: 0.2,
            perturbation_factors: default_perturbation_factors(),
            resample_probability: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEntry {
    /// Trial whose checkpoint this member loaded; `None` in generation 0.
    pub parent: Option<TrialId>,
    pub generation: usize,
    /// Whether the member replaced itself with a copy of a stronger member.
    pub exploited: bool,
}

#[derive(Debug, Clone)]
struct Planned {
    parameters: Assignment,
    parent: Option<TrialId>,
    exploited: bool,
}

#[derive(Debug, Clone)]
pub struct PopulationBasedTraining {
    options: PbtOptions,
    generation: usize,
    plan: Vec<Planned>,
    members: Vec<Vec<TrialId>>,
    parameters: BTreeMap<TrialId, Assignment>,
    lineage: BTreeMap<TrialId, LineageEntry>,
}

impl PopulationBasedTraining {
    pub fn new(options: PbtOptions) -> Result<Self, AlgorithmError> {
        if options.population_size < 2 {
            return Err(AlgorithmError::InvalidOptions("population_size must be at least 2".into()));
        }
        if options.num_generations == 0 || options.generation_length == 0 {
            return Err(AlgorithmError::InvalidOptions("num_generations and generation_length must be positive".into()));
        }
        if !(options.truncation > 0.0 && options.truncation <= 0.5) {
            return Err(AlgorithmError::InvalidOptions("truncation must lie in (0, 0.5]".into()));
        }
        if options.perturbation_factors.is_empty() || options.perturbation_factors.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(AlgorithmError::InvalidOptions("perturbation_factors must be positive and finite".into()));
        }
        if !(0.0..=1.0).contains(&options.resample_probability) {
            return Err(AlgorithmError::InvalidOptions("resample_probability must lie in [0, 1]".into()));
        }
        Ok(Self {
            options,
            generation: 0,
            plan: Vec::new(),
            members: vec![Vec::new()],
            parameters: BTreeMap::new(),
            lineage: BTreeMap::new(),
        })
    }

    pub fn options(&self) -> &PbtOptions {
        &self.options
    }

    pub fn lineage(&self) -> &BTreeMap<TrialId, LineageEntry> {
        &self.lineage
    }

    /// Trial ids of each generation, in population slot order.
    pub fn generations(&self) -> &[Vec<TrialId>] {
        &self.members
    }

    /// Members replaced (and copied from) each generation.
    pub fn cutoff(&self) -> usize {
        let p = self.options.population_size;
        ((p as f64 * self.options.truncation).ceil() as usize).clamp(1, p / 2)
    }

    fn explore(&self, space: &SearchSpace, parameters: &Assignment, rng: &mut StudyRng) -> Assignment {
        let mut out = parameters.clone();
        for def in space.defs() {
            let Some(value) = out.get(&def.name).cloned() else { continue };
            let next = match &def.domain {
                Domain::Choice(cats) | Domain::Ordinal(cats) => {
                    if rng.gen_bool(self.options.resample_probability) {
                        ParameterValue::Category(cats.choose(rng).expect("non-empty categories").clone())
                    } else {
                        value
                    }
                }
                _ => {
                    let factor = *self.options.perturbation_factors.choose(rng).expect("validated non-empty");
                    scale_value(def, &value, factor)
                }
            };
            out.insert(def.name.clone(), next);
        }
        out
    }

    fn plan_next_generation(&mut self, ctx: &mut SuggestContext<'_>) -> Result<(), AlgorithmError> {
        let current = &self.members[self.generation];
        let mut ranked = Vec::with_capacity(current.len());
        for &id in current {
            let record = ctx.history.get(id).ok_or(AlgorithmError::PopulationIncomplete)?;
            if !record.status.is_terminal() {
                return Err(AlgorithmError::PopulationIncomplete);
            }
            let loss = match (record.status, record.final_objective) {
                (TrialStatus::Completed, Some(obj)) => ctx.loss(obj),
                _ => f64::INFINITY,
            };
            ranked.push((loss, id));
        }
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let cut = self.cutoff();
        let top: Vec<TrialId> = ranked[..cut].iter().map(|r| r.1).collect();
        let bottom: Vec<TrialId> = ranked[ranked.len() - cut..].iter().map(|r| r.1).collect();

        let mut plan = Vec::with_capacity(current.len());
        for &id in current {
            if bottom.contains(&id) {
                let donor = *top.choose(ctx.rng).expect("cutoff is at least one");
                let parameters = self.explore(ctx.space, &self.parameters[&donor], ctx.rng);
                plan.push(Planned { parameters, parent: Some(donor), exploited: true });
            } else {
                plan.push(Planned { parameters: self.parameters[&id].clone(), parent: Some(id), exploited: false });
            }
        }
        plan.reverse();
        self.plan = plan;
        self.generation += 1;
        self.members.push(Vec::new());
        Ok(())
    }
}

impl Algorithm for PopulationBasedTraining {
    fn name(&self) -> &'static str {
        "population_based_training"
    }

    fn next(&mut self, ctx: &mut SuggestContext<'_>) -> Result<Next, AlgorithmError> {
        let p = self.options.population_size;
        let planned = if self.generation == 0 && self.members[0].len() < p {
            Planned { parameters: ctx.space.sample(ctx.rng), parent: None, exploited: false }
        } else {
            if self.plan.is_empty() {
                if self.generation + 1 >= self.options.num_generations {
                    return Ok(Next::Exhausted);
                }
                self.plan_next_generation(ctx)?;
            }
            self.plan.pop().expect("planned a full generation")
        };
        let id = ctx.next_id;
        self.members[self.generation].push(id);
        self.parameters.insert(id, planned.parameters.clone());
        self.lineage.insert(id, LineageEntry { parent: planned.parent, generation: self.generation, exploited: planned.exploited });
        Ok(Next::Suggest(Suggestion {
            parameters: planned.parameters,
            reserved: Reserved {
                load_from: Some(planned.parent.map(|t| t.to_string()).unwrap_or_default()),
                save_to: Some(id.to_string()),
                budget: Some(self.options.generation_length),
            },
        }))
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
