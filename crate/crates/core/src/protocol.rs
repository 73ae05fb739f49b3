//! JSON documents exchanged between workers, the server and dashboards.

use std::collections::BTreeMap;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use serde_json::{Map, Value};

use crate::space::{ParameterDef, RESERVED_PREFIX};
use crate::study::{Reserved, Study, Trial, TrialRecord, TrialStatus};
use crate::TrialId;

pub const LOAD_FROM_KEY: &str = "sherpa_load_from";
pub const SAVE_TO_KEY: &str = "sherpa_save_to";
pub const BUDGET_KEY: &str = "sherpa_budget";

pub const NON_FINITE_OBJECTIVE: &str = "non-finite objective";

/// A trial as handed to a worker. Reserved keys ride inside `parameters`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPayload {
    pub id: TrialId,
    pub parameters: Map<String, Value>,
}

impl TrialPayload {
    pub fn from_trial(trial: &Trial) -> Self {
        let mut parameters: Map<String, Value> =
            trial.parameters.iter().map(|(k, v)| (k.clone(), v.to_json())).collect();
        let Reserved { load_from, save_to, budget } = &trial.reserved;
        if let Some(v) = load_from {
            parameters.insert(LOAD_FROM_KEY.into(), Value::String(v.clone()));
        }
        if let Some(v) = save_to {
            parameters.insert(SAVE_TO_KEY.into(), Value::String(v.clone()));
        }
        if let Some(v) = budget {
            parameters.insert(BUDGET_KEY.into(), Value::from(*v));
        }
        Self { id: trial.id, parameters }
    }

    /// User parameters only, without the reserved keys.
    pub fn user_parameters(&self) -> Map<String, Value> {
        self.parameters.iter().filter(|(k, _)| !k.starts_with(RESERVED_PREFIX)).map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn reserved(&self) -> Reserved {
        Reserved {
            load_from: self.parameters.get(LOAD_FROM_KEY).and_then(Value::as_str).map(str::to_owned),
            save_to: self.parameters.get(SAVE_TO_KEY).and_then(Value::as_str).map(str::to_owned),
            budget: self.parameters.get(BUDGET_KEY).and_then(Value::as_u64),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.parameters.get(name)
    }
}

/// Objective value on the wire. Accepts plain numbers as well as the strings
/// `"NaN"`, `"Infinity"` and `"-Infinity"` so that non-finite reports reach
/// the server and can be rejected explicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireObjective(pub f64);

impl Serialize for WireObjective {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let v = self.0;
        if v.is_finite() {
            serializer.serialize_f64(v)
        } else if v.is_nan() {
            serializer.serialize_str("NaN")
        } else if v > 0.0 {
            serializer.serialize_str("Infinity")
        } else {
            serializer.serialize_str("-Infinity")
        }
    }
}

impl<'de> Deserialize<'de> for WireObjective {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ObjectiveVisitor;

        impl Visitor<'_> for ObjectiveVisitor {
            type Value = WireObjective;

            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number or one of \"NaN\", \"Infinity\", \"-Infinity\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Self::Value, E> {
                Ok(WireObjective(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Self::Value, E> {
                Ok(WireObjective(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Self::Value, E> {
                Ok(WireObjective(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
                match v {
                    "NaN" | "nan" => Ok(WireObjective(f64::NAN)),
                    "Infinity" | "inf" => Ok(WireObjective(f64::INFINITY)),
                    "-Infinity" | "-inf" => Ok(WireObjective(f64::NEG_INFINITY)),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }

        deserializer.deserialize_any(ObjectiveVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsPayload {
    pub trial_id: TrialId,
    pub iteration: u64,
    pub objective: WireObjective,
    #[serde(default)]
    pub context: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StopFlag {
    pub stop: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationEntry {
    pub iteration: u64,
    pub objective: f64,
    pub context: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub id: TrialId,
    pub status: TrialStatus,
    pub parameters: Map<String, Value>,
    pub final_objective: Option<f64>,
    pub observations: Vec<ObservationEntry>,
}

impl TrialSummary {
    pub fn from_record(record: &TrialRecord) -> Self {
        let mut observations: Vec<ObservationEntry> = record
            .observations
            .iter()
            .map(|o| ObservationEntry { iteration: o.iteration, objective: o.objective, context: o.context.clone() })
            .collect();
        observations.sort_by_key(|o| o.iteration);
        Self {
            id: record.trial.id,
            status: record.status,
            parameters: TrialPayload::from_trial(&record.trial).parameters,
            final_objective: record.final_objective,
            observations,
        }
    }
}

/// Everything a dashboard needs to render a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub parameters: Vec<ParameterDef>,
    pub lower_is_better: bool,
    pub trials: Vec<TrialSummary>,
}

impl ResultsDocument {
    pub fn from_study(study: &Study) -> Self {
        Self {
            parameters: study.space().defs().to_vec(),
            lower_is_better: study.lower_is_better(),
            trials: study.history().iter().map(TrialSummary::from_record).collect(),
        }
    }

    pub fn trial(&self, id: TrialId) -> Option<&TrialSummary> {
        self.trials.iter().find(|t| t.id == id)
    }
}
