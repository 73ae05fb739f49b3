//! Hyperparameter ranges, sampling, and the unit-hypercube encoding used by
//! model-based algorithms.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

/// Prefix reserved for framework keys inside trial payloads.
pub const RESERVED_PREFIX: &str = "sherpa_";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpaceError {
    #[error("parameter name must not be empty")]
    EmptyName,
    #[error("duplicate parameter name {0:?}")]
    DuplicateName(String),
    #[error("parameter {0:?} has no categories")]
    EmptyCategories(String),
    #[error("parameter {name:?} has a bad range: {detail}")]
    BadRange { name: String, detail: String },
    #[error("parameter name {0:?} uses the reserved prefix `sherpa_`")]
    ReservedName(String),
    #[error("value for parameter {name:?} is out of range: {detail}")]
    ValueOutOfRange { name: String, detail: String },
    #[error("assignment is missing parameter {0:?}")]
    MissingValue(String),
    #[error("assignment has unknown parameter {0:?}")]
    UnknownParameter(String),
    #[error("encoded vector has width {got}, expected {expected}")]
    WrongWidth { expected: usize, got: usize },
}

/// A categorical value: string, number or boolean.
#[derive(Debug, Clone)]
pub enum Category {
    Str(String),
    Num(f64),
    Bool(bool),
}

impl PartialEq for Category {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Category::Str(a), Category::Str(b)) => a == b,
            (Category::Num(a), Category::Num(b)) => a.to_bits() == b.to_bits() || a == b,
            (Category::Bool(a), Category::Bool(b)) => a == b,
            _ => false,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Category::Str(s) => f.write_str(s),
            Category::Num(n) => write!(f, "{n}"),
            Category::Bool(b) => write!(f, "{b}"),
        }
    }
}

impl From<&str> for Category {
    fn from(s: &str) -> Self {
        Category::Str(s.to_string())
    }
}

impl From<f64> for Category {
    fn from(n: f64) -> Self {
        Category::Num(n)
    }
}

impl From<bool> for Category {
    fn from(b: bool) -> Self {
        Category::Bool(b)
    }
}

impl Category {
    pub fn to_json(&self) -> Value {
        match self {
            Category::Str(s) => Value::String(s.clone()),
            Category::Num(n) => serde_json::Number::from_f64(*n).map_or(Value::Null, Value::Number),
            Category::Bool(b) => Value::Bool(*b),
        }
    }

    pub fn from_json(value: &Value) -> Option<Self> {
        match value {
            Value::String(s) => Some(Category::Str(s.clone())),
            Value::Number(n) => n.as_f64().map(Category::Num),
            Value::Bool(b) => Some(Category::Bool(*b)),
            _ => None,
        }
    }
}

impl Serialize for Category {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Category::Str(s) => serializer.serialize_str(s),
            Category::Num(n) => serializer.serialize_f64(*n),
            Category::Bool(b) => serializer.serialize_bool(*b),
        }
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        Category::from_json(&value)
            .ok_or_else(|| serde::de::Error::custom("category must be a string, number or boolean"))
    }
}

/// The range a parameter draws from.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Continuous { lo: f64, hi: f64 },
    /// Continuous, sampled and encoded on a log10 scale. Requires `0 < lo`.
    ContinuousLog { lo: f64, hi: f64 },
    /// Integers in `[lo, hi]`, both ends inclusive.
    Discrete { lo: i64, hi: i64 },
    /// Unordered categories.
    Choice(Vec<Category>),
    /// Ordered categories.
    Ordinal(Vec<Category>),
}

impl Domain {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Domain::Continuous { .. } => "continuous",
            Domain::ContinuousLog { .. } => "continuous_log",
            Domain::Discrete { .. } => "discrete",
            Domain::Choice(_) => "choice",
            Domain::Ordinal(_) => "ordinal",
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Domain::Continuous { .. } | Domain::ContinuousLog { .. } | Domain::Discrete { .. }
        )
    }
}

/// A named hyperparameter range.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterDef {
    pub name: String,
    pub domain: Domain,
}

impl ParameterDef {
    pub fn continuous(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), domain: Domain::Continuous { lo, hi } }
    }

    pub fn continuous_log(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), domain: Domain::ContinuousLog { lo, hi } }
    }

    pub fn discrete(name: impl Into<String>, lo: i64, hi: i64) -> Self {
        Self { name: name.into(), domain: Domain::Discrete { lo, hi } }
    }

    pub fn choice<C: Into<Category>>(name: impl Into<String>, choices: impl IntoIterator<Item = C>) -> Self {
        Self {
            name: name.into(),
            domain: Domain::Choice(choices.into_iter().map(Into::into).collect()),
        }
    }

    pub fn ordinal<C: Into<Category>>(name: impl Into<String>, choices: impl IntoIterator<Item = C>) -> Self {
        Self {
            name: name.into(),
            domain: Domain::Ordinal(choices.into_iter().map(Into::into).collect()),
        }
    }

    /// Checks the invariants of this single definition.
    pub fn validate(&self) -> Result<(), SpaceError> {
        let bad = |detail: &str| SpaceError::BadRange { name: self.name.clone(), detail: detail.to_string() };
        if self.name.is_empty() {
            return Err(SpaceError::EmptyName);
        }
        match &self.domain {
            Domain::Continuous { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(bad("bounds must be finite"));
                }
                if lo >= hi {
                    return Err(bad("lower bound must be strictly less than upper bound"));
                }
            }
            Domain::ContinuousLog { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(bad("bounds must be finite"));
                }
                if *lo <= 0.0 {
                    return Err(bad("log-scale lower bound must be positive"));
                }
                if lo >= hi {
                    return Err(bad("lower bound must be strictly less than upper bound"));
                }
            }
            Domain::Discrete { lo, hi } => {
                if lo >= hi {
                    return Err(bad("lower bound must be strictly less than upper bound"));
                }
            }
            Domain::Choice(cats) | Domain::Ordinal(cats) => {
                if cats.is_empty() {
                    return Err(SpaceError::EmptyCategories(self.name.clone()));
                }
                for (i, c) in cats.iter().enumerate() {
                    if let Category::Num(n) = c {
                        if !n.is_finite() {
                            return Err(bad("numeric categories must be finite"));
                        }
                    }
                    if cats[..i].contains(c) {
                        return Err(bad(&format!("category {c} appears more than once")));
                    }
                }
            }
        }
        if self.name.starts_with(RESERVED_PREFIX) {
            return Err(SpaceError::ReservedName(self.name.clone()));
        }
        Ok(())
    }

    /// Draws a value uniformly from the range (log-uniformly for log scale).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ParameterValue {
        match &self.domain {
            Domain::Continuous { lo, hi } => ParameterValue::Float(rng.gen_range(*lo..=*hi)),
            Domain::ContinuousLog { lo, hi } => {
                let u = rng.gen_range(lo.log10()..=hi.log10());
                ParameterValue::Float(10f64.powf(u).clamp(*lo, *hi))
            }
            Domain::Discrete { lo, hi } => ParameterValue::Int(rng.gen_range(*lo..=*hi)),
            Domain::Choice(cats) | Domain::Ordinal(cats) => {
                ParameterValue::Category(cats[rng.gen_range(0..cats.len())].clone())
            }
        }
    }

    /// Number of coordinates this parameter occupies in the encoding.
    pub fn width(&self) -> usize {
        match &self.domain {
            Domain::Choice(cats) => cats.len(),
            _ => 1,
        }
    }

    /// Position of a category value, for Choice and Ordinal parameters.
    pub fn category_index(&self, value: &Category) -> Option<usize> {
        match &self.domain {
            Domain::Choice(cats) | Domain::Ordinal(cats) => cats.iter().position(|c| c == value),
            _ => None,
        }
    }

    /// Checks that `value` has the right tag and lies within the range.
    pub fn check_value(&self, value: &ParameterValue) -> Result<(), SpaceError> {
        let out = |detail: String| SpaceError::ValueOutOfRange { name: self.name.clone(), detail };
        match (&self.domain, value) {
            (Domain::Continuous { lo, hi } | Domain::ContinuousLog { lo, hi }, ParameterValue::Float(v)) => {
                if v.is_finite() && *v >= *lo && *v <= *hi {
                    Ok(())
                } else {
                    Err(out(format!("{v} not in [{lo}, {hi}]")))
                }
            }
            (Domain::Discrete { lo, hi }, ParameterValue::Int(v)) => {
                if v >= lo && v <= hi {
                    Ok(())
                } else {
                    Err(out(format!("{v} not in [{lo}, {hi}]")))
                }
            }
            (Domain::Choice(_) | Domain::Ordinal(_), ParameterValue::Category(c)) => {
                if self.category_index(c).is_some() {
                    Ok(())
                } else {
                    Err(out(format!("{c} is not a declared category")))
                }
            }
            (domain, value) => Err(out(format!("{value:?} does not match kind {}", domain.kind_name()))),
        }
    }

    /// Reads a JSON scalar into a value of this parameter's kind.
    pub fn value_from_json(&self, value: &Value) -> Result<ParameterValue, SpaceError> {
        let out = || SpaceError::ValueOutOfRange {
            name: self.name.clone(),
            detail: format!("{value} does not match kind {}", self.domain.kind_name()),
        };
        let parsed = match &self.domain {
            Domain::Continuous { .. } | Domain::ContinuousLog { .. } => {
                ParameterValue::Float(value.as_f64().ok_or_else(out)?)
            }
            Domain::Discrete { .. } => {
                let v = match value.as_i64() {
                    Some(v) => v,
                    None => {
                        let f = value.as_f64().ok_or_else(out)?;
                        if f.fract() != 0.0 {
                            return Err(out());
                        }
                        f as i64
                    }
                };
                ParameterValue::Int(v)
            }
            Domain::Choice(_) | Domain::Ordinal(_) => {
                ParameterValue::Category(Category::from_json(value).ok_or_else(out)?)
            }
        };
        self.check_value(&parsed)?;
        Ok(parsed)
    }

    fn encode_into(&self, value: &ParameterValue, out: &mut Vec<f64>) -> Result<(), SpaceError> {
        self.check_value(value)?;
        match (&self.domain, value) {
            (Domain::Continuous { lo, hi }, ParameterValue::Float(v)) => out.push((v - lo) / (hi - lo)),
            (Domain::ContinuousLog { lo, hi }, ParameterValue::Float(v)) => {
                let (llo, lhi) = (lo.log10(), hi.log10());
                out.push(((v.log10() - llo) / (lhi - llo)).clamp(0.0, 1.0));
            }
            (Domain::Discrete { lo, hi }, ParameterValue::Int(v)) => {
                out.push((v - lo) as f64 / (hi - lo) as f64);
            }
            (Domain::Ordinal(cats), ParameterValue::Category(c)) => {
                let idx = self.category_index(c).expect("checked above");
                out.push(if cats.len() == 1 { 0.0 } else { idx as f64 / (cats.len() - 1) as f64 });
            }
            (Domain::Choice(cats), ParameterValue::Category(c)) => {
                let idx = self.category_index(c).expect("checked above");
                out.extend((0..cats.len()).map(|i| if i == idx { 1.0 } else { 0.0 }));
            }
            _ => unreachable!("check_value rejects mismatched kinds"),
        }
        Ok(())
    }

    fn decode_slice(&self, coords: &[f64]) -> ParameterValue {
        let unit = |u: f64| if u.is_nan() { 0.0 } else { u.clamp(0.0, 1.0) };
        match &self.domain {
            Domain::Continuous { lo, hi } => {
                ParameterValue::Float((lo + unit(coords[0]) * (hi - lo)).clamp(*lo, *hi))
            }
            Domain::ContinuousLog { lo, hi } => {
                let (llo, lhi) = (lo.log10(), hi.log10());
                ParameterValue::Float(10f64.powf(llo + unit(coords[0]) * (lhi - llo)).clamp(*lo, *hi))
            }
            Domain::Discrete { lo, hi } => {
                let span = (hi - lo) as f64;
                ParameterValue::Int((lo + (unit(coords[0]) * span).round() as i64).clamp(*lo, *hi))
            }
            Domain::Ordinal(cats) => {
                let idx = (unit(coords[0]) * (cats.len() - 1) as f64).round() as usize;
                ParameterValue::Category(cats[idx.min(cats.len() - 1)].clone())
            }
            Domain::Choice(cats) => {
                let mut best = 0;
                for (i, &c) in coords.iter().enumerate() {
                    if unit(c) > unit(coords[best]) {
                        best = i;
                    }
                }
                ParameterValue::Category(cats[best].clone())
            }
        }
    }
}

/// One concrete value of a parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum ParameterValue {
    Float(f64),
    Int(i64),
    Category(Category),
}

impl ParameterValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParameterValue::Float(v) => Some(*v),
            ParameterValue::Int(v) => Some(*v as f64),
            ParameterValue::Category(Category::Num(v)) => Some(*v),
            ParameterValue::Category(_) => None,
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            ParameterValue::Float(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
            ParameterValue::Int(v) => Value::from(*v),
            ParameterValue::Category(c) => c.to_json(),
        }
    }
}

impl fmt::Display for ParameterValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParameterValue::Float(v) => write!(f, "{v}"),
            ParameterValue::Int(v) => write!(f, "{v}"),
            ParameterValue::Category(c) => write!(f, "{c}"),
        }
    }
}

impl Serialize for ParameterValue {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ParameterValue::Float(v) => serializer.serialize_f64(*v),
            ParameterValue::Int(v) => serializer.serialize_i64(*v),
            ParameterValue::Category(c) => c.serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for ParameterValue {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(deserializer)?;
        match &value {
            Value::Number(n) if n.is_i64() => Ok(ParameterValue::Int(n.as_i64().unwrap_or_default())),
            Value::Number(n) => Ok(ParameterValue::Float(n.as_f64().unwrap_or(f64::NAN))),
            other => Category::from_json(other)
                .map(ParameterValue::Category)
                .ok_or_else(|| serde::de::Error::custom("parameter value must be a JSON scalar")),
        }
    }
}

/// One value per parameter, keyed by name.
pub type Assignment = BTreeMap<String, ParameterValue>;

/// Validates a list of definitions: per-definition invariants in declaration
/// order, then name uniqueness.
pub fn validate_space(defs: &[ParameterDef]) -> Result<(), SpaceError> {
    let mut seen = HashSet::new();
    for def in defs {
        def.validate()?;
        if !seen.insert(def.name.as_str()) {
            return Err(SpaceError::DuplicateName(def.name.clone()));
        }
    }
    Ok(())
}

/// A validated, ordered list of parameter definitions.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    defs: Vec<ParameterDef>,
}

impl SearchSpace {
    pub fn new(defs: Vec<ParameterDef>) -> Result<Self, SpaceError> {
        validate_space(&defs)?;
        Ok(Self { defs })
    }

    pub fn defs(&self) -> &[ParameterDef] {
        &self.defs
    }

    pub fn len(&self) -> usize {
        self.defs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.defs.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ParameterDef> {
        self.defs.iter().find(|d| d.name == name)
    }

    /// Total encoded width.
    pub fn width(&self) -> usize {
        self.defs.iter().map(ParameterDef::width).sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Assignment {
        self.defs.iter().map(|d| (d.name.clone(), d.sample(rng))).collect()
    }

    pub fn check(&self, assignment: &Assignment) -> Result<(), SpaceError> {
        for def in &self.defs {
            let value = assignment.get(&def.name).ok_or_else(|| SpaceError::MissingValue(def.name.clone()))?;
            def.check_value(value)?;
        }
        if let Some(extra) = assignment.keys().find(|k| self.get(k).is_none()) {
            return Err(SpaceError::UnknownParameter(extra.clone()));
        }
        Ok(())
    }

    /// Maps an assignment onto `[0, 1]^width`.
    pub fn encode(&self, assignment: &Assignment) -> Result<Vec<f64>, SpaceError> {
        let mut out = Vec::with_capacity(self.width());
        for def in &self.defs {
            let value = assignment.get(&def.name).ok_or_else(|| SpaceError::MissingValue(def.name.clone()))?;
            def.encode_into(value, &mut out)?;
        }
        Ok(out)
    }

    /// Inverse of [`encode`](Self::encode). Coordinates are clipped to `[0, 1]`;
    /// discrete values round to nearest and one-hot blocks take the first argmax.
    pub fn decode(&self, coords: &[f64]) -> Result<Assignment, SpaceError> {
        let expected = self.width();
        if coords.len() != expected {
            return Err(SpaceError::WrongWidth { expected, got: coords.len() });
        }
        let mut offset = 0;
        let mut out = Assignment::new();
        for def in &self.defs {
            let w = def.width();
            out.insert(def.name.clone(), def.decode_slice(&coords[offset..offset + w]));
            offset += w;
        }
        Ok(out)
    }

    /// Reads a JSON object of parameter values into a typed assignment.
    pub fn assignment_from_json(&self, object: &serde_json::Map<String, Value>) -> Result<Assignment, SpaceError> {
        let mut out = Assignment::new();
        for def in &self.defs {
            let raw = object.get(&def.name).ok_or_else(|| SpaceError::MissingValue(def.name.clone()))?;
            out.insert(def.name.clone(), def.value_from_json(raw)?);
        }
        Ok(out)
    }
}

// Config/wire representation: {"name", "kind", "range"} or {"name", "kind", "choices"}.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParameterDef {
    name: String,
    kind: RawKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    range: Option<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    choices: Option<Vec<Category>>,
}

#[derive(Serialize, Deserialize, Clone, Copy)]
#[serde(rename_all = "snake_case")]
enum RawKind {
    Continuous,
    ContinuousLog,
    Discrete,
    Choice,
    Ordinal,
}

impl Serialize for ParameterDef {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let float = |v: f64| serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number);
        let (kind, range, choices) = match &self.domain {
            Domain::Continuous { lo, hi } => (RawKind::Continuous, Some(vec![float(*lo), float(*hi)]), None),
            Domain::ContinuousLog { lo, hi } => (RawKind::ContinuousLog, Some(vec![float(*lo), float(*hi)]), None),
            Domain::Discrete { lo, hi } => (RawKind::Discrete, Some(vec![Value::from(*lo), Value::from(*hi)]), None),
            Domain::Choice(c) => (RawKind::Choice, None, Some(c.clone())),
            Domain::Ordinal(c) => (RawKind::Ordinal, None, Some(c.clone())),
        };
        RawParameterDef { name: self.name.clone(), kind, range, choices }.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ParameterDef {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let raw = RawParameterDef::deserialize(deserializer)?;
        let name = raw.name;
        let pair = |range: Option<Vec<Value>>| -> Result<(Value, Value), D::Error> {
            match range {
                Some(r) if r.len() == 2 => Ok((r[0].clone(), r[1].clone())),
                Some(r) => Err(D::Error::custom(format!(
                    "parameter {name:?}: `range` must have exactly 2 entries, got {}",
                    r.len()
                ))),
                None => Err(D::Error::custom(format!("parameter {name:?}: missing `range`"))),
            }
        };
        let float = |v: &Value| {
            v.as_f64()
                .ok_or_else(|| D::Error::custom(format!("parameter {name:?}: range bounds must be numbers")))
        };
        let int = |v: &Value| {
            v.as_i64()
                .ok_or_else(|| D::Error::custom(format!("parameter {name:?}: discrete bounds must be integers")))
        };
        let no_choices = |choices: &Option<Vec<Category>>| {
            if choices.is_some() {
                Err(D::Error::custom(format!("parameter {name:?}: `choices` is only valid for choice/ordinal")))
            } else {
                Ok(())
            }
        };
        let domain = match raw.kind {
            RawKind::Continuous | RawKind::ContinuousLog => {
                no_choices(&raw.choices)?;
                let (lo, hi) = pair(raw.range)?;
                let (lo, hi) = (float(&lo)?, float(&hi)?);
                if matches!(raw.kind, RawKind::Continuous) {
                    Domain::Continuous { lo, hi }
                } else {
                    Domain::ContinuousLog { lo, hi }
                }
            }
            RawKind::Discrete => {
                no_choices(&raw.choices)?;
                let (lo, hi) = pair(raw.range)?;
                Domain::Discrete { lo: int(&lo)?, hi: int(&hi)? }
            }
            RawKind::Choice | RawKind::Ordinal => {
                if raw.range.is_some() {
                    return Err(D::Error::custom(format!(
                        "parameter {name:?}: use `choices`, not `range`, for categorical kinds"
                    )));
                }
                let choices = raw
                    .choices
                    .ok_or_else(|| D::Error::custom(format!("parameter {name:?}: missing `choices`")))?;
                if matches!(raw.kind, RawKind::Choice) {
                    Domain::Choice(choices)
                } else {
                    Domain::Ordinal(choices)
                }
            }
        };
        Ok(ParameterDef { name, domain })
    }
}
