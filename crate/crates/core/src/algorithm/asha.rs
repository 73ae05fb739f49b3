//! Asynchronous successive halving: grow rung 0 with random configurations
//! and promote the top `1/η` of each rung to the next budget as soon as they
//! qualify.

use std::any::Any;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Algorithm, AlgorithmError, Next, SuggestContext};
use crate::space::Assignment;
use crate::study::{Reserved, Suggestion, TrialStatus};
use crate::TrialId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AshaOptions {
    /// Minimum resource `r` (iterations) granted to a fresh configuration.
    pub min_resource: u64,
    /// Maximum resource `R`.
    pub max_resource: u64,
    /// Reduction factor `η`.
    pub reduction_factor: u64,
    /// Minimum early-stopping rate `s`.
    pub min_early_stopping_rate: u32,
    /// Fresh configurations to draw; unlimited when unset.
    pub max_num_trials: Option<usize>,
}

impl Default for AshaOptions {
    fn default() -> Self {
        Self { min_resource: 1, max_resource: 9, reduction_factor: 3, min_early_stopping_rate: 0, max_num_trials: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RungEntry {
    pub trial_id: TrialId,
    /// Final objective at the rung budget, oriented so lower is better.
    pub loss: f64,
    pub promoted: bool,
}

#[derive(Debug, Clone)]
struct Issued {
    rung: usize,
    parameters: Assignment,
    settled: bool,
}

#[derive(Debug, Clone)]
pub struct SuccessiveHalving {
    budgets: Vec<u64>,
    eta: u64,
    max_num_trials: Option<usize>,
    fresh: usize,
    rungs: Vec<Vec<RungEntry>>,
    issued: BTreeMap<TrialId, Issued>,
}

impl SuccessiveHalving {
    pub fn new(options: AshaOptions) -> Result<Self, AlgorithmError> {
        let AshaOptions { min_resource: r, max_resource: big_r, reduction_factor: eta, min_early_stopping_rate: s, max_num_trials } =
            options;
        if r == 0 || big_r < r {
            return Err(AlgorithmError::InvalidOptions("need 0 < min_resource <= max_resource".into()));
        }
        if eta < 2 {
            return Err(AlgorithmError::InvalidOptions("reduction_factor must be at least 2".into()));
        }
        // largest m with r·η^m ≤ R
        let mut m = 0u32;
        while r.saturating_mul(eta.saturating_pow(m + 1)) <= big_r {
            m += 1;
        }
        if s > m {
            return Err(AlgorithmError::InvalidOptions(format!(
                "min_early_stopping_rate {s} leaves no rungs (at most {m})"
            )));
        }
        let budgets = (0..=(m - s)).map(|k| r * eta.pow(k + s)).collect::<Vec<_>>();
        let rungs = vec![Vec::new(); budgets.len()];
        Ok(Self { budgets, eta, max_num_trials, fresh: 0, rungs, issued: BTreeMap::new() })
    }

    /// Budget of each rung, rung 0 first.
    pub fn budgets(&self) -> &[u64] {
        &self.budgets
    }

    pub fn rungs(&self) -> &[Vec<RungEntry>] {
        &self.rungs
    }

    pub fn fresh_issued(&self) -> usize {
        self.fresh
    }

    /// Records a trial's loss at the rung matching `budget`. Idempotent per trial.
    pub fn record(&mut self, trial_id: TrialId, budget: u64, loss: f64) -> Result<(), AlgorithmError> {
        let rung = self.budgets.iter().position(|&b| b == budget).ok_or(AlgorithmError::UnknownRung { budget })?;
        if self.rungs[rung].iter().any(|e| e.trial_id == trial_id) {
            return Ok(());
        }
        self.rungs[rung].push(RungEntry { trial_id, loss, promoted: false });
        Ok(())
    }

    /// Entries of `rung` eligible for promotion: the top ⌊n/η⌋ by loss, ties by id.
    pub fn top_of_rung(&self, rung: usize) -> Vec<TrialId> {
        let entries = &self.rungs[rung];
        let mut ranked: Vec<&RungEntry> = entries.iter().collect();
        ranked.sort_by(|a, b| a.loss.total_cmp(&b.loss).then(a.trial_id.cmp(&b.trial_id)));
        let k = entries.len() / self.eta as usize;
        ranked.into_iter().take(k).map(|e| e.trial_id).collect()
    }

    fn absorb(&mut self, ctx: &SuggestContext<'_>) {
        let mut finished = Vec::new();
        for (&id, issued) in &self.issued {
            if issued.settled {
                continue;
            }
            let Some(record) = ctx.history.get(id) else { continue };
            if record.status.is_terminal() {
                let loss = match (record.status, record.final_objective) {
                    (TrialStatus::Completed, Some(obj)) => Some(ctx.loss(obj)),
                    _ => None,
                };
                finished.push((id, issued.rung, loss));
            }
        }
        for (id, rung, loss) in finished {
            if let Some(loss) = loss {
                let budget = self.budgets[rung];
                self.record(id, budget, loss).expect("issued budgets are on the ladder");
            }
            self.issued.get_mut(&id).expect("listed above").settled = true;
        }
    }

    fn promotable(&self) -> Option<(usize, TrialId)> {
        for rung in (0..self.budgets.len().saturating_sub(1)).rev() {
            for id in self.top_of_rung(rung) {
                let entry = self.rungs[rung].iter().find(|e| e.trial_id == id).expect("ranked from rung");
                if !entry.promoted {
                    return Some((rung, id));
                }
            }
        }
        None
    }

    fn issue(&mut self, ctx: &SuggestContext<'_>, rung: usize, parameters: Assignment, load_from: String) -> Next {
        self.issued.insert(ctx.next_id, Issued { rung, parameters: parameters.clone(), settled: false });
        Next::Suggest(Suggestion {
            parameters,
            reserved: Reserved {
                load_from: Some(load_from),
                save_to: Some(ctx.next_id.to_string()),
                budget: Some(self.budgets[rung]),
            },
        })
    }
}

impl Algorithm for SuccessiveHalving {
    fn name(&self) -> &'static str {
        "successive_halving"
    }

    fn next(&mut self, ctx: &mut SuggestContext<'_>) -> Result<Next, AlgorithmError> {
        self.absorb(ctx);
        if let Some((rung, id)) = self.promotable() {
            let entry = self.rungs[rung].iter_mut().find(|e| e.trial_id == id).expect("promotable entry");
            entry.promoted = true;
            let parameters = self.issued.get(&id).map(|i| i.parameters.clone()).unwrap_or_else(|| {
                ctx.history.get(id).map(|r| r.trial.parameters.clone()).unwrap_or_default()
            });
            return Ok(self.issue(ctx, rung + 1, parameters, id.to_string()));
        }
        if self.max_num_trials.is_none_or(|max| self.fresh < max) {
            self.fresh += 1;
            let parameters = ctx.space.sample(ctx.rng);
            return Ok(self.issue(ctx, 0, parameters, String::new()));
        }
        if self.issued.values().any(|i| !i.settled) {
            return Err(AlgorithmError::AwaitingResults);
        }
        Ok(Next::Exhausted)
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
