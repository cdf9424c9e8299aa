//! Event schema, labels and the dataset field taxonomy.
//!
//! A [`DatasetSchema`] lists, per group, the numerical, categorical and
//! auxiliary timestamp fields of a dataset, plus the single entity field and
//! the primary event-timestamp field. Events travel as newline-delimited JSON
//! objects whose keys match the schema; a missing key and `null` both mean
//! "missing".

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Keys with a fixed meaning in the event line format.
pub const EVENT_ID_KEY: &str = "event_id";
pub const LABEL_KEY: &str = "label";
pub const SCORABLE_KEY: &str = "scorable";

const RESERVED_KEYS: [&str; 3] = [EVENT_ID_KEY, LABEL_KEY, SCORABLE_KEY];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("event has no entity id")]
    MissingEntityId,
    #[error("event has no timestamp")]
    MissingTimestamp,
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("malformed event line: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Legit,
    Fraud,
    Unknown,
}

impl Label {
    pub fn is_fraud(self) -> bool {
        self == Label::Fraud
    }

    pub fn is_known(self) -> bool {
        self != Label::Unknown
    }

    /// 1.0 for fraud, 0.0 for legit, `None` when unknown.
    pub fn target(self) -> Option<f64> {
        match self {
            Label::Fraud => Some(1.0),
            Label::Legit => Some(0.0),
            Label::Unknown => None,
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            Label::Legit => 0,
            Label::Fraud => 1,
            Label::Unknown => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Label::Legit),
            1 => Some(Label::Fraud),
            2 => Some(Label::Unknown),
            _ => None,
        }
    }
}

/// One payment event as it arrives, before any transformation.
///
/// After [`validate_event`] every field group is aligned to schema order and
/// contains every declared field, with `None` marking a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEvent {
    pub event_id: u64,
    pub entity_id: String,
    /// Epoch milliseconds, UTC.
    pub event_ts: i64,
    pub numericals: Vec<(String, Option<f64>)>,
    pub categoricals: Vec<(String, Option<String>)>,
    pub timestamps: Vec<(String, Option<i64>)>,
    pub label: Label,
    pub scorable: bool,
}

impl RawEvent {
    pub fn numerical(&self, name: &str) -> Option<f64> {
        self.numericals
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| *v)
    }

    pub fn categorical(&self, name: &str) -> Option<&str> {
        self.categoricals
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| v.as_deref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NumericTransform {
    Zscore,
    Percentile,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NumericField {
    pub name: String,
    pub transform: NumericTransform,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub entity_field: String,
    pub timestamp_field: String,
    #[serde(default)]
    pub numericals: Vec<NumericField>,
    #[serde(default)]
    pub categoricals: Vec<String>,
    #[serde(default)]
    pub timestamps: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FieldKind {
    Numerical,
    Categorical,
    Timestamp,
}

impl DatasetSchema {
    /// Checks that every field name is unique across groups and that none
    /// collides with a reserved line-format key.
    pub fn check(&self) -> Result<(), SchemaError> {
        if self.entity_field.is_empty() || self.timestamp_field.is_empty() {
            return Err(SchemaError::InvalidSchema(
                "entity and timestamp field names must be non-empty".into(),
            ));
        }
        let mut seen = HashSet::new();
        let names = [self.entity_field.as_str(), self.timestamp_field.as_str()]
            .into_iter()
            .chain(self.numericals.iter().map(|f| f.name.as_str()))
            .chain(self.categoricals.iter().map(String::as_str))
            .chain(self.timestamps.iter().map(String::as_str));
        for name in names {
            if RESERVED_KEYS.contains(&name) {
                return Err(SchemaError::InvalidSchema(format!(
                    "field name `{name}` is reserved"
                )));
            }
            if !seen.insert(name) {
                return Err(SchemaError::InvalidSchema(format!(
                    "field name `{name}` declared more than once"
                )));
            }
        }
        Ok(())
    }

    fn kind_of(&self, name: &str) -> Option<FieldKind> {
        if self.numericals.iter().any(|f| f.name == name) {
            Some(FieldKind::Numerical)
        } else if self.categoricals.iter().any(|c| c == name) {
            Some(FieldKind::Categorical)
        } else if self.timestamps.iter().any(|t| t == name) {
            Some(FieldKind::Timestamp)
        } else {
            None
        }
    }

    /// Stable 64-bit digest of the schema, used to tie pipelines, models and
    /// stored states together.
    pub fn hash64(&self) -> u64 {
        let canonical = serde_json::to_vec(self).expect("schema serializes");
        let digest = Sha256::digest(&canonical);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SchemaError> {
        let schema: DatasetSchema =
            toml::from_str(s).map_err(|e| SchemaError::InvalidSchema(e.to_string()))?;
        schema.check()?;
        Ok(schema)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("schema serializes to toml")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SchemaError::InvalidSchema(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_toml_string())
    }
}

/// Aligns an event to schema order.
///
/// Undeclared fields and fields filed under the wrong kind are rejected;
/// declared fields absent from the event are filled in as missing.
pub fn validate_event(e: RawEvent, s: &DatasetSchema) -> Result<RawEvent, SchemaError> {
    if e.entity_id.is_empty() {
        return Err(SchemaError::MissingEntityId);
    }
    let check_group = |names: Vec<&str>, expected: FieldKind| -> Result<(), SchemaError> {
        for name in names {
            match s.kind_of(name) {
                Some(k) if k == expected => {}
                Some(k) => {
                    return Err(SchemaError::SchemaMismatch(format!(
                        "field `{name}` is declared {k:?} but was given as {expected:?}"
                    )))
                }
                None => {
                    return Err(SchemaError::SchemaMismatch(format!(
                        "field `{name}` is not declared in the schema"
                    )))
                }
            }
        }
        Ok(())
    };
    check_group(
        e.numericals.iter().map(|(n, _)| n.as_str()).collect(),
        FieldKind::Numerical,
    )?;
    check_group(
        e.categoricals.iter().map(|(n, _)| n.as_str()).collect(),
        FieldKind::Categorical,
    )?;
    check_group(
        e.timestamps.iter().map(|(n, _)| n.as_str()).collect(),
        FieldKind::Timestamp,
    )?;

    let numericals = s
        .numericals
        .iter()
        .map(|f| {
            let v = e
                .numericals
                .iter()
                .find(|(n, _)| *n == f.name)
                .and_then(|(_, v)| *v);
            (f.name.clone(), v)
        })
        .collect();
    let categoricals = s
        .categoricals
        .iter()
        .map(|name| {
            let v = e
                .categoricals
                .iter()
                .find(|(n, _)| n == name)
                .and_then(|(_, v)| v.clone());
            (name.clone(), v)
        })
        .collect();
    let timestamps = s
        .timestamps
        .iter()
        .map(|name| {
            let v = e
                .timestamps
                .iter()
                .find(|(n, _)| n == name)
                .and_then(|(_, v)| *v);
            (name.clone(), v)
        })
        .collect();

    Ok(RawEvent {
        numericals,
        categoricals,
        timestamps,
        ..e
    })
}

/// Parses one event line. `fallback_id` is used when the line carries no
/// `event_id` key.
pub fn parse_event_line(
    line: &str,
    s: &DatasetSchema,
    fallback_id: u64,
) -> Result<RawEvent, SchemaError> {
    let obj: Map<String, Value> =
        serde_json::from_str(line).map_err(|e| SchemaError::Malformed(e.to_string()))?;

    let mut entity_id = None;
    let mut event_ts = None;
    let mut event_id = fallback_id;
    let mut label = Label::Unknown;
    let mut scorable = true;
    let mut numericals = Vec::new();
    let mut categoricals = Vec::new();
    let mut timestamps = Vec::new();

    let mismatch = |key: &str, want: &str| {
        SchemaError::SchemaMismatch(format!("field `{key}` must be {want}"))
    };

    for (key, value) in &obj {
        let key = key.as_str();
        if key == s.entity_field {
            match value {
                Value::Null => {}
                Value::String(v) => entity_id = Some(v.clone()),
                _ => return Err(mismatch(key, "a string")),
            }
        } else if key == s.timestamp_field {
            match value {
                Value::Null => {}
                v => event_ts = Some(v.as_i64().ok_or_else(|| mismatch(key, "an integer"))?),
            }
        } else if key == EVENT_ID_KEY {
            event_id = value.as_u64().ok_or_else(|| mismatch(key, "an unsigned integer"))?;
        } else if key == LABEL_KEY {
            label = match value {
                Value::Null => Label::Unknown,
                v => match v.as_i64() {
                    Some(1) => Label::Fraud,
                    Some(0) => Label::Legit,
                    _ => return Err(mismatch(key, "0, 1 or null")),
                },
            };
        } else if key == SCORABLE_KEY {
            scorable = value.as_bool().ok_or_else(|| mismatch(key, "a boolean"))?;
        } else {
            match s.kind_of(key) {
                Some(FieldKind::Numerical) => {
                    let v = match value {
                        Value::Null => None,
                        v => Some(v.as_f64().ok_or_else(|| mismatch(key, "a number"))?),
                    };
                    numericals.push((key.to_string(), v));
                }
                Some(FieldKind::Categorical) => {
                    let v = match value {
                        Value::Null => None,
                        Value::String(v) => Some(v.clone()),
                        _ => return Err(mismatch(key, "a string")),
                    };
                    categoricals.push((key.to_string(), v));
                }
                Some(FieldKind::Timestamp) => {
                    let v = match value {
                        Value::Null => None,
                        v => Some(v.as_i64().ok_or_else(|| mismatch(key, "an integer"))?),
                    };
                    timestamps.push((key.to_string(), v));
                }
                None => {
                    return Err(SchemaError::SchemaMismatch(format!(
                        "field `{key}` is not declared in the schema"
                    )))
                }
            }
        }
    }

    let raw = RawEvent {
        event_id,
        entity_id: entity_id.ok_or(SchemaError::MissingEntityId)?,
        event_ts: event_ts.ok_or(SchemaError::MissingTimestamp)?,
        numericals,
        categoricals,
        timestamps,
        label,
        scorable,
    };
    validate_event(raw, s)
}

/// Renders a validated event as one line (no trailing newline). Missing
/// values are written as `null`.
pub fn event_to_line(e: &RawEvent, s: &DatasetSchema) -> String {
    let mut obj = Map::new();
    obj.insert(EVENT_ID_KEY.into(), Value::from(e.event_id));
    obj.insert(s.entity_field.clone(), Value::from(e.entity_id.clone()));
    obj.insert(s.timestamp_field.clone(), Value::from(e.event_ts));
    for (n, v) in &e.numericals {
        obj.insert(n.clone(), v.map(Value::from).unwrap_or(Value::Null));
    }
    for (n, v) in &e.categoricals {
        obj.insert(n.clone(), v.clone().map(Value::from).unwrap_or(Value::Null));
    }
    for (n, v) in &e.timestamps {
        obj.insert(n.clone(), v.map(Value::from).unwrap_or(Value::Null));
    }
    let label = match e.label {
        Label::Fraud => Value::from(1),
        Label::Legit => Value::from(0),
        Label::Unknown => Value::Null,
    };
    obj.insert(LABEL_KEY.into(), label);
    obj.insert(SCORABLE_KEY.into(), Value::from(e.scorable));
    Value::Object(obj).to_string()
}

/// Reads a whole event file. Blank lines are skipped; lines without an
/// `event_id` get their zero-based line ordinal.
pub fn read_events(path: impl AsRef<Path>, s: &DatasetSchema) -> Result<Vec<RawEvent>, crate::Error> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e = parse_event_line(line, s, i as u64).map_err(|err| match err {
            SchemaError::Malformed(m) => SchemaError::Malformed(format!("line {}: {m}", i + 1)),
            other => other,
        })?;
        out.push(e);
    }
    Ok(out)
}

pub fn write_events(
    path: impl AsRef<Path>,
    events: &[RawEvent],
    s: &DatasetSchema,
) -> std::io::Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in events {
        writeln!(w, "{}", event_to_line(e, s))?;
    }
    w.flush()
}
