use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{Algorithm, AlgorithmError, AlgorithmSpec, Next, SuggestContext};
use crate::study::Suggestion;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepeatOptions {
    pub k: usize,
    pub inner: Box<AlgorithmSpec>,
}

/// Emits every suggestion of the wrapped algorithm `k` times in a row.
pub struct Repeat {
    inner: Box<dyn Algorithm>,
    k: usize,
    pending: VecDeque<Suggestion>,
}

impl Repeat {
    pub fn new(inner: Box<dyn Algorithm>, k: usize) -> Self {
        Self { inner, k: k.max(1), pending: VecDeque::new() }
    }
}

impl Algorithm for Repeat {
    fn name(&self) -> &'static str {
        "repeat"
    }

    fn next(&mut self, ctx: &mut SuggestContext<'_>) -> Result<Next, AlgorithmError> {
        if let Some(s) = self.pending.pop_front() {
            return Ok(Next::Suggest(s));
        }
        match self.inner.next(ctx)? {
            Next::Exhausted => Ok(Next::Exhausted),
            Next::Suggest(s) => {
                self.pending.extend(std::iter::repeat_n(s.clone(), self.k - 1));
                Ok(Next::Suggest(s))
            }
        }
    }

    fn repeats(&self) -> Option<usize> {
        Some(self.k)
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }
}
