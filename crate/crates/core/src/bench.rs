//! Synthetic benchmark harness. Runs studies in-process against cheap
//! objectives and summarizes the best objective reached per seed.

use std::collections::BTreeMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algorithm::{
    AlgorithmSpec, AshaOptions, BayesOptOptions, PbtOptions, RandomSearchOptions,
};
use crate::space::{Assignment, ParameterDef};
use crate::study::{Study, StudyConfig, StudyError, Suggest, Trial};
use crate::{StudyRng, TrialId};

/// Iterations of a full training run in the learning-curve suite.
pub const FULL_BUDGET: u64 = 27;
/// Iterations between halvings of the learning-curve gap.
pub const DECAY_STEP: u64 = 3;
/// Standard deviation of the learning-curve measurement noise.
pub const CURVE_NOISE: f64 = 0.002;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("unknown suite {0:?} (expected sphere, branin or step-decay-curves)")]
    UnknownSuite(String),
    #[error("unknown benchmark algorithm {0:?}")]
    UnknownAlgorithm(String),
    #[error(transparent)]
    Study(#[from] StudyError),
}

/// An objective that can be trained for a number of iterations, optionally
/// resuming from the checkpoint of an earlier trial.
pub trait Task {
    fn parameters(&self) -> Vec<ParameterDef>;

    fn lower_is_better(&self) -> bool {
        true
    }

    /// Trains `trial` and returns its `(iteration, objective)` reports.
    fn run(&mut self, trial: &Trial) -> Vec<(u64, f64)>;

    /// Total training iterations spent so far.
    fn iterations(&self) -> u64;
}

fn coordinate(a: &Assignment, name: &str) -> f64 {
    a.get(name).and_then(|v| v.as_f64()).expect("benchmark parameters are numeric")
}

/// `f(x) = Σ x_i²` on `[-5, 5]^d`.
#[derive(Debug, Clone)]
pub struct Sphere {
    pub dim: usize,
    evaluations: u64,
}

impl Sphere {
    pub fn new(dim: usize) -> Self {
        Self { dim, evaluations: 0 }
    }

    pub fn value(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }
}

impl Task for Sphere {
    fn parameters(&self) -> Vec<ParameterDef> {
        (0..self.dim).map(|i| ParameterDef::continuous(format!("x{i}"), -5.0, 5.0)).collect()
    }

    fn run(&mut self, trial: &Trial) -> Vec<(u64, f64)> {
        self.evaluations += 1;
        let x: Vec<f64> = (0..self.dim).map(|i| coordinate(&trial.parameters, &format!("x{i}"))).collect();
        vec![(0, Self::value(&x))]
    }

    fn iterations(&self) -> u64 {
        self.evaluations
    }
}

/// The Branin function on `[-5, 10] × [0, 15]`; global minimum ≈ 0.397887.
#[derive(Debug, Clone, Default)]
pub struct Branin {
    evaluations: u64,
}

impl Branin {
    pub const MINIMUM: f64 = 0.397_887_357_729_738;

    pub fn value(x1: f64, x2: f64) -> f64 {
        use std::f64::consts::PI;
        let b = 5.1 / (4.0 * PI * PI);
        let c = 5.0 / PI;
        let t = 1.0 / (8.0 * PI);
        (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
    }
}

impl Task for Branin {
    fn parameters(&self) -> Vec<ParameterDef> {
        vec![ParameterDef::continuous("x1", -5.0, 10.0), ParameterDef::continuous("x2", 0.0, 15.0)]
    }

    fn run(&mut self, trial: &Trial) -> Vec<(u64, f64)> {
        self.evaluations += 1;
        vec![(0, Self::value(coordinate(&trial.parameters, "x1"), coordinate(&trial.parameters, "x2")))]
    }

    fn iterations(&self) -> u64 {
        self.evaluations
    }
}

/// Learning curves that start high and halve their gap to a per-configuration
/// floor every [`DECAY_STEP`] iterations. Every curve shares the same gap, so
/// the ranking by floor is visible from the first iteration up to noise.
#[derive(Debug, Clone)]
pub struct StepDecayCurves {
    noise_seed: u64,
    progress: BTreeMap<TrialId, u64>,
    iterations: u64,
}

impl StepDecayCurves {
    pub fn new(noise_seed: u64) -> Self {
        Self { noise_seed, progress: BTreeMap::new(), iterations: 0 }
    }

    /// Objective after full training.
    pub fn floor(a: &Assignment) -> f64 {
        let x = coordinate(a, "x");
        let y = coordinate(a, "y");
        (x - 0.3).powi(2) + (y - 0.6).powi(2)
    }

    pub fn loss(a: &Assignment, iteration: u64) -> f64 {
        Self::floor(a) + 0.5f64.powi((iteration / DECAY_STEP) as i32)
    }

    fn noise(&self, trial: TrialId, iteration: u64) -> f64 {
        let mut rng = StudyRng::seed_from_u64(self.noise_seed);
        rng.set_stream(trial);
        rng.set_word_pos(u128::from(iteration) * 16);
        rng.sample::<f64, _>(StandardNormal) * CURVE_NOISE
    }
}

impl Task for StepDecayCurves {
    fn parameters(&self) -> Vec<ParameterDef> {
        vec![ParameterDef::continuous("x", 0.0, 1.0), ParameterDef::continuous("y", 0.0, 1.0)]
    }

    fn run(&mut self, trial: &Trial) -> Vec<(u64, f64)> {
        let target = trial.reserved.budget.unwrap_or(FULL_BUDGET);
        let start = trial
            .reserved
            .load_from
            .as_deref()
            .and_then(|s| s.parse::<TrialId>().ok())
            .and_then(|parent| self.progress.get(&parent).copied())
            .unwrap_or(0)
            .min(target);
        self.iterations += target - start;
        self.progress.insert(trial.id, target);
        (start + 1..=target).map(|t| (t, Self::loss(&trial.parameters, t) + self.noise(trial.id, t))).collect()
    }

    fn iterations(&self) -> u64 {
        self.iterations
    }
}

/// Deterministic training recurrence: each iteration adds `lr` to the score
/// (higher is better), so larger rates always train faster. Members resume from the score of the trial they
/// load from.
#[derive(Debug, Clone, Default)]
pub struct RecurrenceTask {
    scores: BTreeMap<TrialId, f64>,
    iterations: u64,
}

impl RecurrenceTask {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn score(&self, trial: TrialId) -> Option<f64> {
        self.scores.get(&trial).copied()
    }
}

impl Task for RecurrenceTask {
    fn parameters(&self) -> Vec<ParameterDef> {
        vec![ParameterDef::continuous("lr", 0.0, 1.0)]
    }

    fn lower_is_better(&self) -> bool {
        false
    }

    fn run(&mut self, trial: &Trial) -> Vec<(u64, f64)> {
        let steps = trial.reserved.budget.unwrap_or(1);
        let mut score = trial
            .reserved
            .load_from
            .as_deref()
            .and_then(|s| s.parse::<TrialId>().ok())
            .and_then(|parent| self.scores.get(&parent).copied())
            .unwrap_or(0.0);
        let gain = coordinate(&trial.parameters, "lr");
        let mut out = Vec::with_capacity(steps as usize);
        for i in 0..steps {
            score += gain;
            out.push((i, score));
        }
        self.iterations += steps;
        self.scores.insert(trial.id, score);
        out
    }

    fn iterations(&self) -> u64 {
        self.iterations
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub best: Option<f64>,
    pub best_trial: Option<TrialId>,
    pub trials: usize,
    pub iterations: u64,
}

/// Runs a study to exhaustion in API mode: suggest, train, report, finalize.
pub fn run_study(study: &mut Study, task: &mut dyn Task) -> Result<Outcome, StudyError> {
    loop {
        let trial = match study.get_suggestion() {
            Ok(Suggest::Trial(t)) => t,
            Ok(Suggest::Done) => break,
            // sequential runs finalize every trial, so a wait means nothing is left to do
            Err(e) if e.is_wait() => break,
            Err(e) => return Err(e),
        };
        study.mark_running(trial.id)?;
        for (iteration, objective) in task.run(&trial) {
            study.add_observation(trial.id, iteration, objective, BTreeMap::new())?;
        }
        study.finalize(trial.id)?;
    }
    let best = study.best_result();
    Ok(Outcome {
        best: best.as_ref().map(|b| b.objective),
        best_trial: best.map(|b| b.trial_id),
        trials: study.history().len(),
        iterations: task.iterations(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Sphere,
    Branin,
    StepDecayCurves,
}

impl FromStr for Suite {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sphere" => Ok(Suite::Sphere),
            "branin" => Ok(Suite::Branin),
            "step-decay-curves" => Ok(Suite::StepDecayCurves),
            other => Err(BenchError::UnknownSuite(other.to_string())),
        }
    }
}

impl Suite {
    pub fn task(self, seed: u64) -> Box<dyn Task> {
        match self {
            Suite::Sphere => Box::new(Sphere::new(2)),
            Suite::Branin => Box::new(Branin::default()),
            Suite::StepDecayCurves => Box::new(StepDecayCurves::new(seed)),
        }
    }
}

pub const BENCH_ALGORITHMS: &[&str] =
    &["random_search", "bayesian_optimization", "successive_halving", "population_based_training"];

/// Algorithm configuration used by the harness for a budget of `budget` trials
/// (fresh configurations for successive halving).
pub fn algorithm_for(name: &str, budget: usize) -> Result<AlgorithmSpec, BenchError> {
    Ok(match name {
        "random_search" | "random" => AlgorithmSpec::RandomSearch(RandomSearchOptions { max_num_trials: Some(budget) }),
        "bayesian_optimization" | "bayesopt" | "gpyopt" => {
            AlgorithmSpec::BayesianOptimization(BayesOptOptions { max_num_trials: Some(budget) })
        }
        "successive_halving" | "asha" => AlgorithmSpec::SuccessiveHalving(AshaOptions {
            min_resource: 1,
            max_resource: FULL_BUDGET,
            reduction_factor: 3,
            min_early_stopping_rate: 0,
            max_num_trials: Some(budget),
        }),
        "population_based_training" | "pbt" => {
            let population_size = 8;
            AlgorithmSpec::PopulationBasedTraining(PbtOptions {
                population_size,
                num_generations: budget.div_ceil(population_size).max(1),
                generation_length: DECAY_STEP,
                ..PbtOptions::default()
            })
        }
        other => return Err(BenchError::UnknownAlgorithm(other.to_string())),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    /// Best objective per seed, in seed order; `null` when nothing completed.
    pub best: Vec<Option<f64>>,
    pub iterations: Vec<u64>,
    pub median_best: Option<f64>,
    pub iqr_best: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub suite: Suite,
    pub budget: usize,
    pub seeds: Vec<u64>,
    pub algorithms: Vec<AlgorithmSummary>,
}

impl BenchReport {
    pub fn summary(&self, algorithm: &str) -> Option<&AlgorithmSummary> {
        self.algorithms.iter().find(|a| a.algorithm == algorithm)
    }

    /// Plain-text table of median and interquartile range per algorithm.
    pub fn table(&self) -> String {
        let mut out = format!("{:<28} {:>14} {:>14} {:>14}\n", "algorithm", "median best", "q1", "q3");
        for a in &self.algorithms {
            let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
            out.push_str(&format!(
                "{:<28} {:>14} {:>14} {:>14}\n",
                a.algorithm,
                fmt(a.median_best),
                fmt(a.iqr_best.map(|q| q[0])),
                fmt(a.iqr_best.map(|q| q[1]))
            ));
        }
        out
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile(&sorted, 0.5)
}

/// Runs one study of `algorithm` on `suite` for one seed.
pub fn run_one(suite: Suite, algorithm: &AlgorithmSpec, seed: u64) -> Result<Outcome, BenchError> {
    let mut task = suite.task(seed);
    let config =
        StudyConfig { parameters: task.parameters(), algorithm: algorithm.clone(), lower_is_better: task.lower_is_better() };
    let mut study = Study::new(config, seed)?;
    Ok(run_study(&mut study, task.as_mut())?)
}

/// Runs every algorithm over `seeds` and summarizes. A zero budget yields an
/// empty report.
pub fn bench(suite: Suite, algorithms: &[String], budget: usize, seeds: &[u64]) -> Result<BenchReport, BenchError> {
    let specs = algorithms.iter().map(|a| algorithm_for(a, budget).map(|s| (a.clone(), s))).collect::<Result<Vec<_>, _>>()?;
    let mut report = BenchReport { suite, budget, seeds: seeds.to_vec(), algorithms: Vec::new() };
    if budget == 0 {
        return Ok(report);
    }
    for (name, spec) in specs {
        let mut best = Vec::with_capacity(seeds.len());
        let mut iterations = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let outcome = run_one(suite, &spec, seed)?;
            best.push(outcome.best);
            iterations.push(outcome.iterations);
        }
        let mut finite: Vec<f64> = best.iter().flatten().copied().collect();
        finite.sort_by(f64::total_cmp);
        let iqr = quantile(&finite, 0.25).zip(quantile(&finite, 0.75)).map(|(a, b)| [a, b]);
        report.algorithms.push(AlgorithmSummary {
            algorithm: name,
            median_best: quantile(&finite, 0.5),
            iqr_best: iqr,
            best,
            iterations,
        });
    }
    Ok(report)
}
