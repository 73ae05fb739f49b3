use std::any::Any;

use serde::{Deserialize, Serialize};
use tracing::debug;

use super::{Algorithm, AlgorithmError, Next, SuggestContext};
use crate::gp::GpModel;
use crate::space::{Assignment, Domain, SearchSpace};
use crate::study::Suggestion;

/// Random candidates scored by EI per suggestion.
pub const CANDIDATES: usize = 1024;
/// Best candidates refined by coordinate-wise golden-section search.
pub const REFINED: usize = 8;
/// Golden-section iterations per coordinate.
pub const GOLDEN_STEPS: usize = 32;
/// Random redraws attempted when the EI argmax repeats an earlier assignment.
pub const DUPLICATE_REDRAWS: usize = 16;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BayesOptOptions {
    pub max_num_trials: Option<usize>,
}

/// GP + expected improvement over the encoded search space. Conditions on
/// final objectives of completed trials only.
#[derive(Debug, Clone)]
pub struct BayesianOptimization {
    max_num_trials: Option<usize>,
    issued: usize,
}

impl BayesianOptimization {
    pub fn new(options: BayesOptOptions) -> Self {
        Self { max_num_trials: options.max_num_trials, issued: 0 }
    }

    /// Random suggestions are issued until this many trials have completed.
    pub fn initial_design_size(space: &SearchSpace) -> usize {
        3usize.max(2 * space.len())
    }
}

/// Encoded coordinates that vary continuously (numeric parameters).
fn numeric_coordinates(space: &SearchSpace) -> Vec<usize> {
    let mut out = Vec::new();
    let mut offset = 0;
    for def in space.defs() {
        if matches!(def.domain, Domain::Continuous { .. } | Domain::ContinuousLog { .. } | Domain::Discrete { .. }) {
            out.push(offset);
        }
        offset += def.width();
    }
    out
}

/// Maximizes `f` over `[0, 1]` by golden-section search.
fn golden_section_max(mut f: impl FnMut(f64) -> f64, steps: usize) -> (f64, f64) {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..steps {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

impl BayesianOptimization {
    fn acquire(&self, ctx: &mut SuggestContext<'_>) -> Option<Assignment> {
        let space = ctx.space;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (record, objective) in ctx.history.completed() {
            x.push(space.encode(&record.trial.parameters).ok()?);
            y.push(ctx.loss(objective));
        }
        let (lo, hi) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        if hi - lo <= 1e-12 * lo.abs().max(1.0) {
            // flat objective: EI carries no information
            return None;
        }
        let model = match GpModel::fit(x, &y, ctx.rng) {
            Ok(m) => m,
            Err(e) => {
                debug!(error = %e, "GP fit failed; falling back to a random suggestion");
                return None;
            }
        };
        let best_y = lo;

        let mut scored: Vec<(Vec<f64>, f64)> = (0..CANDIDATES)
            .filter_map(|_| space.encode(&space.sample(ctx.rng)).ok())
            .map(|c| {
                let ei = model.expected_improvement(&c, best_y);
                (c, ei)
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));

        let coords = numeric_coordinates(space);
        let mut best: Option<(Vec<f64>, f64)> = None;
        for (start, start_ei) in scored.into_iter().take(REFINED) {
            let mut point = start;
            let mut value = start_ei;
            for &c in &coords {
                let mut probe = point.clone();
                let (u, ei) = golden_section_max(
                    |u| {
                        probe[c] = u;
                        model.expected_improvement(&probe, best_y)
                    },
                    GOLDEN_STEPS,
                );
                if ei > value {
                    point[c] = u;
                    value = ei;
                }
            }
            if best.as_ref().is_none_or(|(_, b)| value > *b) {
                best = Some((point, value));
            }
        }
        let (point, ei) = best?;
        if ei <= 0.0 {
            return None;
        }
        space.decode(&point).ok()
    }
}

impl Algorithm for BayesianOptimization {
    fn name(&self) -> &'static str {
        "bayesian_optimization"
    }

    fn next(&mut self, ctx: &mut SuggestContext<'_>) -> Result<Next, AlgorithmError> {
        if self.max_num_trials.is_some_and(|max| self.issued >= max) {
            return Ok(Next::Exhausted);
        }
        self.issued += 1;
        if ctx.history.completed_count() < Self::initial_design_size(ctx.space) {
            return Ok(Next::Suggest(Suggestion::plain(ctx.space.sample(ctx.rng))));
        }
        let history = ctx.history;
        let seen = |a: &Assignment| history.iter().any(|r| &r.trial.parameters == a);
        let mut candidate = self.acquire(ctx);
        if candidate.as_ref().is_some_and(|c| seen(c)) {
            candidate = None;
            for _ in 0..DUPLICATE_REDRAWS {
                let draw = ctx.space.sample(ctx.rng);
                let duplicate = seen(&draw);
                candidate = Some(draw);
                if !duplicate {
                    break;
                }
            }
        }
        let assignment = candidate.unwrap_or_else(|| ctx.space.sample(ctx.rng));
        Ok(Next::Suggest(Suggestion::plain(assignment)))
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
