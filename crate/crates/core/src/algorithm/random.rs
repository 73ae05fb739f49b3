use serde::{Deserialize, Serialize};

use super::{Algorithm, AlgorithmError, Next, SuggestContext};
use crate::study::Suggestion;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomSearchOptions {
    /// Unlimited when unset.
    pub max_num_trials: Option<usize>,
}

/// Independent uniform draws per parameter.
#[derive(Debug, Clone)]
pub struct RandomSearch {
    max_num_trials: Option<usize>,
    count: usize,
}

impl RandomSearch {
    pub fn new(options: RandomSearchOptions) -> Self {
        Self { max_num_trials: options.max_num_trials, count: 0 }
    }
}

impl Algorithm for RandomSearch {
    fn name(&self) -> &'static str {
        "random_search"
    }

    fn next(&mut self, ctx: &mut SuggestContext<'_>) -> Result<Next, AlgorithmError> {
        if self.max_num_trials.is_some_and(|max| self.count >= max) {
            return Ok(Next::Exhausted);
        }
        self.count += 1;
        Ok(Next::Suggest(Suggestion::plain(ctx.space.sample(ctx.rng))))
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }
}
