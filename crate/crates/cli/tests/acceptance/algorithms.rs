use std::collections::{BTreeMap, BTreeSet};

use hpo_core::algorithm::{
    AlgorithmSpec, AshaOptions, LocalSearch, LocalSearchOptions, PbtOptions, PopulationBasedTraining, RandomSearchOptions,
    RepeatOptions, SuccessiveHalving,
};
use hpo_core::bench::{self, run_study, RecurrenceTask, StepDecayCurves, Suite, Task, FULL_BUDGET};
use hpo_core::{ParameterDef, Study, StudyConfig, StudyRng, Suggest, Trial, TrialId, TrialStatus};
use rand::{Rng, SeedableRng};

use crate::Verdict;

const SEEDS: u64 = 20;
const BO_BUDGET: usize = 30;
const BO_MIN_WINS: usize = 14;
const HALVING_CONFIGS: usize = 100;
const HALVING_MAX_SHARE: f64 = 0.4;
const HALVING_TOP: usize = 5;
const MIN_SUCCESSES: usize = 18;
const POPULATION: usize = 8;
const GENERATIONS: usize = 10;
const TRUNCATION: f64 = 0.25;
const CLIMB_TRIALS: usize = 200;
const CLIMB_TARGET: i64 = 7;
const CLIMB_RADIUS: i64 = 2;
const REPEAT_CASES: u64 = 200;

fn study(parameters: Vec<ParameterDef>, algorithm: AlgorithmSpec, lower_is_better: bool, seed: u64) -> Result<Study, String> {
    Study::new(StudyConfig { parameters, algorithm, lower_is_better }, seed).map_err(|e| e.to_string())
}

fn complete(study: &mut Study, id: TrialId, objective: f64) -> Result<(), String> {
    study.add_observation(id, 0, objective, BTreeMap::new()).map_err(|e| e.to_string())?;
    study.finalize(id).map(|_| ()).map_err(|e| e.to_string())
}

/// Issues suggestions until the algorithm waits or is done.
fn drain(study: &mut Study) -> Result<(Vec<Trial>, bool), String> {
    let mut batch = Vec::new();
    loop {
        match study.get_suggestion() {
            Ok(Suggest::Trial(t)) => batch.push(t),
            Ok(Suggest::Done) => return Ok((batch, true)),
            Err(e) if e.is_wait() => return Ok((batch, false)),
            Err(e) => return Err(e.to_string()),
        }
    }
}

fn median(values: &[f64]) -> f64 {
    bench::median(values).expect("non-empty")
}

pub fn bo_beats_random() -> Verdict {
    let mut summary = Vec::new();
    for suite in [Suite::Sphere, Suite::Branin] {
        let random = bench::algorithm_for("random_search", BO_BUDGET).map_err(|e| e.to_string())?;
        let bayes = bench::algorithm_for("bayesian_optimization", BO_BUDGET).map_err(|e| e.to_string())?;
        let mut r = Vec::new();
        let mut b = Vec::new();
        for seed in 0..SEEDS {
            r.push(bench::run_one(suite, &random, seed).map_err(|e| e.to_string())?.best.ok_or("random found nothing")?);
            b.push(bench::run_one(suite, &bayes, seed).map_err(|e| e.to_string())?.best.ok_or("bayesopt found nothing")?);
        }
        let wins = b.iter().zip(&r).filter(|(b, r)| b < r).count();
        let (mb, mr) = (median(&b), median(&r));
        ensure!(mb <= mr, "{suite:?}: bayesopt median {mb:.4} > random median {mr:.4}");
        ensure!(wins >= BO_MIN_WINS, "{suite:?}: bayesopt strictly better in {wins}/{SEEDS} seeds, need {BO_MIN_WINS}");
        summary.push(format!("{suite:?} medians {mb:.4} vs {mr:.4}, wins {wins}/{SEEDS}"));
    }
    Ok(summary.join("; "))
}

pub fn promotion_conservation() -> Verdict {
    let opts = AshaOptions { min_resource: 1, max_resource: 9, reduction_factor: 3, min_early_stopping_rate: 0, max_num_trials: Some(27) };
    let mut s = study(vec![ParameterDef::continuous("x", 0.0, 1.0)], AlgorithmSpec::SuccessiveHalving(opts), true, 5)?;
    let budgets = [1u64, 3, 9];
    let mut rung_of: BTreeMap<TrialId, usize> = BTreeMap::new();
    let mut loss: BTreeMap<TrialId, f64> = BTreeMap::new();
    let mut promoted_from: BTreeMap<usize, BTreeSet<TrialId>> = BTreeMap::new();
    // synchronous replay: every issued trial reports before the next request
    loop {
        let (batch, done) = drain(&mut s)?;
        for t in &batch {
            let budget = t.reserved.budget.ok_or("trial without budget")?;
            let rung = budgets.iter().position(|&b| b == budget).ok_or(format!("unexpected budget {budget}"))?;
            rung_of.insert(t.id, rung);
            if rung > 0 {
                let parent: TrialId = t.reserved.load_from.as_deref().and_then(|p| p.parse().ok()).ok_or("promotion without parent")?;
                ensure!(rung_of.get(&parent) == Some(&(rung - 1)), "trial {} promoted from rung of {parent}", t.id);
                ensure!(promoted_from.entry(rung - 1).or_default().insert(parent), "trial {parent} promoted twice");
            }
            let l = t.parameters["x"].as_f64().unwrap() + 1.0 / budget as f64;
            loss.insert(t.id, l);
            complete(&mut s, t.id, l)?;
        }
        if done {
            break;
        }
        ensure!(!batch.is_empty(), "algorithm waits with nothing pending");
    }
    let population: Vec<usize> = (0..3).map(|r| rung_of.values().filter(|&&k| k == r).count()).collect();
    ensure!(population == [27, 9, 3], "rung populations {population:?}");
    let asha = s.algorithm().as_any().downcast_ref::<SuccessiveHalving>().ok_or("not successive halving")?;
    for rung in 0..2 {
        let mut members: Vec<(f64, TrialId)> = rung_of.iter().filter(|(_, &k)| k == rung).map(|(&id, _)| (loss[&id], id)).collect();
        members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let oracle: BTreeSet<TrialId> = members.iter().take(members.len() / 3).map(|m| m.1).collect();
        ensure!(promoted_from.get(&rung) == Some(&oracle), "rung {rung}: promoted {:?}, oracle {oracle:?}", promoted_from.get(&rung));
        let flagged: BTreeSet<TrialId> = asha.rungs()[rung].iter().filter(|e| e.promoted).map(|e| e.trial_id).collect();
        ensure!(flagged == oracle, "rung {rung}: flagged {flagged:?}, oracle {oracle:?}");
    }
    Ok(format!("rung populations {population:?}; promoted sets equal the top-third oracle"))
}

pub fn halving_efficiency() -> Verdict {
    let spec = bench::algorithm_for("successive_halving", HALVING_CONFIGS).map_err(|e| e.to_string())?;
    let full = (HALVING_CONFIGS as u64 * FULL_BUDGET) as f64;
    let mut hits = 0;
    let mut worst_share = 0.0f64;
    for seed in 0..SEEDS {
        let mut task = StepDecayCurves::new(seed);
        let mut s = study(task.parameters(), spec.clone(), true, seed)?;
        let outcome = run_study(&mut s, &mut task).map_err(|e| e.to_string())?;
        let share = outcome.iterations as f64 / full;
        worst_share = worst_share.max(share);
        ensure!(share <= HALVING_MAX_SHARE, "seed {seed}: {} iterations is {:.1}% of full training", outcome.iterations, share * 100.0);

        let fresh: Vec<f64> = s
            .history()
            .iter()
            .filter(|r| r.trial.reserved.load_from.as_deref().unwrap_or("").is_empty())
            .map(|r| StepDecayCurves::floor(&r.trial.parameters))
            .collect();
        ensure!(fresh.len() == HALVING_CONFIGS, "seed {seed}: {} fresh configurations", fresh.len());
        let mut sorted = fresh.clone();
        sorted.sort_by(f64::total_cmp);
        let best = s.best_result().ok_or("no best result")?;
        let chosen = StepDecayCurves::floor(&best.parameters);
        hits += usize::from(chosen <= sorted[HALVING_TOP - 1]);
    }
    ensure!(hits >= MIN_SUCCESSES, "selected best in the true top {HALVING_TOP} for {hits}/{SEEDS} seeds");
    Ok(format!("top-{HALVING_TOP} hit {hits}/{SEEDS}; at most {:.1}% of full-budget iterations", worst_share * 100.0))
}

/// Checks the truncation-selection forest; returns the generation-0 members.
fn check_lineage(s: &Study, seed: u64) -> Result<Vec<TrialId>, String> {
    let pbt = s.algorithm().as_any().downcast_ref::<PopulationBasedTraining>().ok_or("not population based")?;
    let generations = pbt.generations();
    ensure!(generations.len() == GENERATIONS, "seed {seed}: {} generations", generations.len());
    let cut = (POPULATION as f64 * TRUNCATION).round() as usize;
    let lr = |id: TrialId| s.trial(id).unwrap().trial.parameters["lr"].as_f64().unwrap();
    for (g, members) in generations.iter().enumerate() {
        ensure!(members.len() == POPULATION, "seed {seed}: generation {g} has {} members", members.len());
        let ranked: Vec<TrialId> = if g == 0 {
            Vec::new()
        } else {
            let mut r: Vec<(f64, TrialId)> =
                generations[g - 1].iter().map(|&id| (s.trial(id).unwrap().final_objective.unwrap_or(f64::NEG_INFINITY), id)).collect();
            r.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            r.into_iter().map(|x| x.1).collect()
        };
        for (slot, &id) in members.iter().enumerate() {
            let entry = pbt.lineage().get(&id).ok_or(format!("seed {seed}: trial {id} missing from lineage"))?;
            let trial = &s.trial(id).unwrap().trial;
            ensure!(entry.generation == g, "seed {seed}: trial {id} in generation {g} records {}", entry.generation);
            if g == 0 {
                ensure!(entry.parent.is_none(), "seed {seed}: root {id} has a parent");
                continue;
            }
            let parent = entry.parent.ok_or(format!("seed {seed}: trial {id} has no parent"))?;
            ensure!(
                trial.reserved.load_from.as_deref() == Some(parent.to_string().as_str()),
                "seed {seed}: trial {id} loads {:?}, parent {parent}",
                trial.reserved.load_from
            );
            let previous = generations[g - 1][slot];
            let in_bottom = ranked[ranked.len() - cut..].contains(&previous);
            ensure!(entry.exploited == in_bottom, "seed {seed}: slot {slot} exploited={} bottom={in_bottom}", entry.exploited);
            if in_bottom {
                ensure!(ranked[..cut].contains(&parent), "seed {seed}: donor {parent} outside the top fraction");
                let explored = [0.8, 1.2].iter().any(|f| ((lr(parent) * f).clamp(0.0, 1.0) - lr(id)).abs() < 1e-12);
                ensure!(explored, "seed {seed}: lr {} is not a perturbation of {}", lr(id), lr(parent));
            } else {
                ensure!(parent == previous, "seed {seed}: trial {id} continues {parent}, expected {previous}");
                ensure!(trial.parameters == s.trial(parent).unwrap().trial.parameters, "seed {seed}: continuing member changed");
            }
        }
    }
    Ok(generations[0].clone())
}

pub fn population_training() -> Verdict {
    let opts = PbtOptions {
        population_size: POPULATION,
        num_generations: GENERATIONS,
        generation_length: 1,
        truncation: TRUNCATION,
        ..Default::default()
    };
    let mut wins = 0;
    let mut gains = Vec::new();
    for seed in 0..SEEDS {
        let mut task = RecurrenceTask::new();
        let mut s = study(task.parameters(), AlgorithmSpec::PopulationBasedTraining(opts.clone()), false, seed)?;
        run_study(&mut s, &mut task).map_err(|e| e.to_string())?;
        let roots = check_lineage(&s, seed)?;
        let pbt = s.algorithm().as_any().downcast_ref::<PopulationBasedTraining>().unwrap();
        let best = pbt.generations()[GENERATIONS - 1].iter().filter_map(|&id| task.score(id)).fold(f64::NEG_INFINITY, f64::max);
        // static baseline: the same random initial members trained without exploitation for the same total budget
        let baseline = roots
            .iter()
            .map(|&id| s.trial(id).unwrap().trial.parameters["lr"].as_f64().unwrap() * GENERATIONS as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        wins += usize::from(best > baseline);
        gains.push(best - baseline);
    }
    ensure!(wins >= MIN_SUCCESSES, "population best beats the static baseline in {wins}/{SEEDS} seeds");
    Ok(format!("lineage holds in {SEEDS} runs; beats static baseline in {wins}/{SEEDS} (median gain {:.3})", median(&gains)))
}

pub fn local_search() -> Verdict {
    let mut rng = StudyRng::seed_from_u64(8);
    let mut hits = 0;
    let mut finals = Vec::new();
    for seed in 0..SEEDS {
        let start: i64 = rng.gen_range(0..=100);
        let spec = AlgorithmSpec::LocalSearch(LocalSearchOptions {
            seed_configuration: serde_json::json!({ "x": start }).as_object().unwrap().clone(),
            perturbation_factors: vec![0.8, 1.2],
            max_num_trials: Some(CLIMB_TRIALS),
        });
        let mut s = study(vec![ParameterDef::discrete("x", 0, 100)], spec, true, seed)?;
        while let Some(t) = s.next_trial().map_err(|e| e.to_string())? {
            let x = t.parameters["x"].as_f64().unwrap();
            complete(&mut s, t.id, (x - CLIMB_TARGET as f64).powi(2))?;
        }
        ensure!(s.history().len() == CLIMB_TRIALS, "seed {seed}: {} trials", s.history().len());
        let local = s.algorithm().as_any().downcast_ref::<LocalSearch>().ok_or("not local search")?;
        let trajectory = local.seed_trajectory();
        ensure!(trajectory.windows(2).all(|w| w[1] < w[0]), "seed {seed}: seed objective not monotone: {trajectory:?}");
        let best = s.best_result().ok_or("no best")?.parameters["x"].as_f64().unwrap() as i64;
        hits += usize::from((best - CLIMB_TARGET).abs() <= CLIMB_RADIUS);
        finals.push(format!("{start}->{best}"));
    }
    ensure!(hits >= MIN_SUCCESSES, "|x - {CLIMB_TARGET}| <= {CLIMB_RADIUS} in {hits}/{SEEDS} runs: {}", finals.join(" "));
    Ok(format!("{hits}/{SEEDS} runs end within {CLIMB_RADIUS} of {CLIMB_TARGET}; seed objective monotone in all"))
}

/// Groups completed trials by assignment and returns the best mean; the
/// earliest trial of a group represents it and wins ties.
fn best_mean_oracle(s: &Study, lower_is_better: bool) -> Option<(TrialId, f64)> {
    let mut groups: Vec<(TrialId, String, Vec<f64>)> = Vec::new();
    for record in s.history().iter().filter(|r| r.status == TrialStatus::Completed) {
        let key = format!("{:?}", record.trial.parameters);
        let value = record.final_objective.unwrap();
        match groups.iter_mut().find(|g| g.1 == key) {
            Some(g) => g.2.push(value),
            None => groups.push((record.trial.id, key, vec![value])),
        }
    }
    let mut best: Option<(TrialId, f64)> = None;
    for (id, _, values) in groups {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let better = |b: f64| if lower_is_better { mean < b } else { mean > b };
        if best.is_none_or(|(bid, b)| better(b) || (mean == b && id < bid)) {
            best = Some((id, mean));
        }
    }
    best
}

pub fn repeat_semantics() -> Verdict {
    for case in 0..REPEAT_CASES {
        let mut rng = StudyRng::seed_from_u64(case);
        let k = [1usize, 2, 4][case as usize % 3];
        let n = rng.gen_range(1..12);
        let lower_is_better = rng.gen_bool(0.5);
        let spec = AlgorithmSpec::Repeat(RepeatOptions {
            k,
            inner: Box::new(AlgorithmSpec::RandomSearch(RandomSearchOptions { max_num_trials: Some(n) })),
        });
        let params = vec![ParameterDef::continuous("x", 0.0, 1.0), ParameterDef::choice("c", ["a", "b"])];
        let mut s = study(params, spec, lower_is_better, case)?;
        let mut emitted = Vec::new();
        while let Some(t) = s.next_trial().map_err(|e| e.to_string())? {
            if rng.gen_bool(0.2) {
                s.finalize(t.id).map_err(|e| e.to_string())?;
            } else {
                // coarse objectives so that group means tie now and then
                complete(&mut s, t.id, f64::from(rng.gen_range(0..5)) * 0.25)?;
            }
            emitted.push(t.parameters);
        }
        ensure!(emitted.len() == n * k, "case {case}: {} trials for n={n}, k={k}", emitted.len());
        for block in emitted.chunks(k) {
            ensure!(block.iter().all(|a| *a == block[0]), "case {case}: a block of {k} repeats differs");
        }
        for pair in emitted.chunks(k).collect::<Vec<_>>().windows(2) {
            ensure!(pair[0][0] != pair[1][0], "case {case}: consecutive blocks share an assignment");
        }
        let got = s.best_result().map(|b| (b.trial_id, b.objective));
        let want = best_mean_oracle(&s, lower_is_better);
        let agree = match (got, want) {
            (None, None) => true,
            (Some((gid, gv)), Some((wid, wv))) => gid == wid && (gv - wv).abs() < 1e-12,
            _ => false,
        };
        ensure!(agree, "case {case}: best {got:?}, oracle {want:?}");
    }
    Ok(format!("{REPEAT_CASES} randomized tables over k in {{1, 2, 4}} match the aggregation oracle"))
}
