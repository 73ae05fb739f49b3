use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Algorithm, AlgorithmError, Next, SuggestContext};
use crate::space::{Assignment, Domain, ParameterDef, ParameterValue, SearchSpace};
use crate::study::Suggestion;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSearchOptions {
    /// Points per numeric parameter, endpoints included.
    pub num_grid_points: usize,
    /// Per-parameter overrides of `num_grid_points`.
    pub grid_points: BTreeMap<String, usize>,
    /// Largest allowed Cartesian product.
    pub max_grid_size: u64,
}

impl Default for GridSearchOptions {
    fn default() -> Self {
        Self { num_grid_points: 2, grid_points: BTreeMap::new(), max_grid_size: 1_000_000 }
    }
}

/// Values one parameter contributes to the grid.
pub fn grid_values(def: &ParameterDef, points: usize) -> Vec<ParameterValue> {
    let n = points.max(2);
    match &def.domain {
        Domain::Continuous { lo, hi } => (0..n)
            .map(|i| {
                if i == n - 1 {
                    ParameterValue::Float(*hi)
                } else {
                    ParameterValue::Float(lo + (hi - lo) * i as f64 / (n - 1) as f64)
                }
            })
            .collect(),
        Domain::ContinuousLog { lo, hi } => {
            let (llo, lhi) = (lo.log10(), hi.log10());
            (0..n)
                .map(|i| match i {
                    0 => ParameterValue::Float(*lo),
                    i if i == n - 1 => ParameterValue::Float(*hi),
                    i => ParameterValue::Float(10f64.powf(llo + (lhi - llo) * i as f64 / (n - 1) as f64)),
                })
                .collect()
        }
        Domain::Discrete { lo, hi } => {
            let span = (hi - lo) as u64;
            let m = (n as u64).min(span + 1) as usize;
            (0..m)
                .map(|i| ParameterValue::Int(lo + (span as f64 * i as f64 / (m - 1) as f64).round() as i64))
                .collect()
        }
        Domain::Choice(cats) | Domain::Ordinal(cats) => cats.iter().cloned().map(ParameterValue::Category).collect(),
    }
}

/// Row-major enumeration of the Cartesian product, last parameter fastest.
#[derive(Debug, Clone)]
pub struct GridSearch {
    axes: Vec<(String, Vec<ParameterValue>)>,
    position: u128,
    total: u128,
}

impl GridSearch {
    pub fn new(options: GridSearchOptions, space: &SearchSpace) -> Result<Self, AlgorithmError> {
        if options.num_grid_points < 2 {
            return Err(AlgorithmError::InvalidOptions("num_grid_points must be at least 2".into()));
        }
        if let Some(name) = options.grid_points.keys().find(|n| space.get(n).is_none()) {
            return Err(AlgorithmError::InvalidOptions(format!("grid_points names unknown parameter {name:?}")));
        }
        let axes: Vec<(String, Vec<ParameterValue>)> = space
            .defs()
            .iter()
            .map(|d| {
                let points = options.grid_points.get(&d.name).copied().unwrap_or(options.num_grid_points);
                (d.name.clone(), grid_values(d, points))
            })
            .collect();
        let mut total: u128 = 1;
        for (_, values) in &axes {
            total = total.saturating_mul(values.len() as u128);
        }
        if total > options.max_grid_size as u128 {
            return Err(AlgorithmError::GridTooLarge { size: total, cap: options.max_grid_size });
        }
        Ok(Self { axes, position: 0, total })
    }

    pub fn size(&self) -> u128 {
        self.total
    }

    fn assignment_at(&self, mut index: u128) -> Assignment {
        let mut picks = vec![0usize; self.axes.len()];
        for (slot, (_, values)) in picks.iter_mut().zip(&self.axes).rev() {
            let n = values.len() as u128;
            *slot = (index % n) as usize;
            index /= n;
        }
        self.axes.iter().zip(picks).map(|((name, values), i)| (name.clone(), values[i].clone())).collect()
    }
}

impl Algorithm for GridSearch {
    fn name(&self) -> &'static str {
        "grid_search"
    }

    fn next(&mut self, _ctx: &mut SuggestContext<'_>) -> Result<Next, AlgorithmError> {
        if self.position >= self.total {
            return Ok(Next::Exhausted);
        }
        let assignment = self.assignment_at(self.position);
        self.position += 1;
        Ok(Next::Suggest(Suggestion::plain(assignment)))
    }

    fn as_any(&self) -> &dyn std::any::Any {
        self
    }
}
