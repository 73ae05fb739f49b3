//! The append-only results table and its line-delimited / CSV exports.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::space::Assignment;
use crate::TrialId;

/// Status carried by a results row. Intermediate rows belong to trials that
/// were still running when the observation was recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RowStatus {
    Intermediate,
    Completed,
    Failed,
    Stopped,
}

impl RowStatus {
    pub fn is_terminal(self) -> bool {
        !matches!(self, RowStatus::Intermediate)
    }

    pub fn label(self) -> &'static str {
        match self {
            RowStatus::Intermediate => "INTERMEDIATE",
            RowStatus::Completed => "COMPLETED",
            RowStatus::Failed => "FAILED",
            RowStatus::Stopped => "STOPPED",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub trial_id: TrialId,
    pub parameters: Assignment,
    pub status: RowStatus,
    pub iteration: Option<u64>,
    pub objective: Option<f64>,
    pub context: BTreeMap<String, f64>,
}

impl ResultRow {
    pub fn to_record(&self) -> ResultRecord {
        ResultRecord {
            trial_id: self.trial_id,
            status: self.status,
            iteration: self.iteration,
            objective: self.objective,
            parameters: self.parameters.iter().map(|(k, v)| (k.clone(), v.to_json())).collect(),
            context: self.context.clone(),
        }
    }
}

/// Untyped form of a row, as written to `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub trial_id: TrialId,
    pub status: RowStatus,
    pub iteration: Option<u64>,
    pub objective: Option<f64>,
    pub parameters: BTreeMap<String, Value>,
    #[serde(default)]
    pub context: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(&mut self, row: ResultRow) {
        self.rows.push(row);
    }

    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn terminal_rows(&self) -> impl Iterator<Item = &ResultRow> {
        self.rows.iter().filter(|r| r.status.is_terminal())
    }

    pub fn records(&self) -> Vec<ResultRecord> {
        self.rows.iter().map(ResultRow::to_record).collect()
    }
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("malformed results at line {line}: {detail}")]
    MalformedResults { line: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Canonical JSON text: keys sorted, shortest round-trip floats.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    // serde_json::Value keeps object keys in a BTreeMap.
    let value = serde_json::to_value(value).expect("serializable");
    serde_json::to_string(&value).expect("serializable")
}

/// Writes one canonical JSON record per line.
pub fn write_jsonl<W: Write>(records: &[ResultRecord], mut out: W) -> std::io::Result<()> {
    for record in records {
        writeln!(out, "{}", canonical_json(record))?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<ResultRecord>, ExportError> {
    let mut records = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| ExportError::MalformedResults { line: idx + 1, detail: e.to_string() })?;
        records.push(record);
    }
    Ok(records)
}

/// Orders records by trial, intermediate rows by ascending iteration, terminal
/// row last. The sort is stable so re-reports keep their arrival order.
pub fn canonical_order(records: &mut [ResultRecord]) {
    records.sort_by_key(|r| (r.trial_id, r.status.is_terminal(), r.iteration.unwrap_or(0)));
}

/// CSV with columns `trial_id, status, iteration, objective`, then parameter
/// names sorted, then context keys sorted.
pub fn write_csv<W: Write>(records: &[ResultRecord], out: W) -> Result<(), ExportError> {
    let mut sorted = records.to_vec();
    canonical_order(&mut sorted);
    let params: BTreeSet<&str> = sorted.iter().flat_map(|r| r.parameters.keys().map(String::as_str)).collect();
    let context: BTreeSet<&str> = sorted.iter().flat_map(|r| r.context.keys().map(String::as_str)).collect();

    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["trial_id", "status", "iteration", "objective"];
    header.extend(params.iter().copied());
    header.extend(context.iter().copied());
    writer.write_record(&header)?;

    for r in &sorted {
        let mut row = vec![
            r.trial_id.to_string(),
            r.status.label().to_string(),
            r.iteration.map(|i| i.to_string()).unwrap_or_default(),
            r.objective.map(|o| o.to_string()).unwrap_or_default(),
        ];
        row.extend(params.iter().map(|p| match r.parameters.get(*p) {
            Some(Value::String(s)) => s.clone(),
            Some(v) => v.to_string(),
            None => String::new(),
        }));
        row.extend(context.iter().map(|c| r.context.get(*c).map(|v| v.to_string()).unwrap_or_default()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
