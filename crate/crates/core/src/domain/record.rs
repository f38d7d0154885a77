//! Dataset JSONL records.
//!
//! One JSON object per line:
//! `{"id", "note", "age_years", "patient_type", "specialty"?, "ehr_extras"?, "gold"?, "split"?}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::{Encounter, GoldAnnotation, PatientType, SoapNote, MAX_AGE_YEARS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SplitTag {
    Platinum,
    Disagreement,
    Test,
    Unlabeled,
}

impl SplitTag {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "platinum" => Some(SplitTag::Platinum),
            "disagreement" => Some(SplitTag::Disagreement),
            "test" => Some(SplitTag::Test),
            "unlabeled" | "unlabelled" => Some(SplitTag::Unlabeled),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecordError {
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("invalid age_years {0} (expected an integer in 0..={max})", max = MAX_AGE_YEARS)]
    InvalidAge(String),
    #[error("malformed field `{field}`: {reason}")]
    MalformedRecord { field: String, reason: String },
}

impl RecordError {
    fn malformed(field: &str, reason: impl Into<String>) -> Self {
        RecordError::MalformedRecord {
            field: field.to_string(),
            reason: reason.into(),
        }
    }

    /// Name of the offending field.
    pub fn field(&self) -> &str {
        match self {
            RecordError::MissingField(f) => f,
            RecordError::InvalidAge(_) => "age_years",
            RecordError::MalformedRecord { field, .. } => field,
        }
    }
}

/// An encounter plus the optional annotation and split carried by its line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub encounter: Encounter,
    pub gold: Option<GoldAnnotation>,
    pub split: Option<SplitTag>,
}

fn required<'a>(obj: &'a Map<String, Value>, field: &str) -> Result<&'a Value, RecordError> {
    match obj.get(field) {
        None | Some(Value::Null) => Err(RecordError::MissingField(field.to_string())),
        Some(v) => Ok(v),
    }
}

fn parse_object(line: &str) -> Result<Map<String, Value>, RecordError> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(obj)) => Ok(obj),
        Ok(_) => Err(RecordError::malformed("record", "expected a JSON object")),
        Err(e) => Err(RecordError::malformed("record", e.to_string())),
    }
}

fn encounter_from(obj: &Map<String, Value>) -> Result<Encounter, RecordError> {
    let id = match required(obj, "id")? {
        Value::String(s) if !s.trim().is_empty() => s.clone(),
        Value::String(_) => return Err(RecordError::malformed("id", "empty id")),
        _ => return Err(RecordError::malformed("id", "expected a string")),
    };
    let note = match required(obj, "note")? {
        Value::String(s) if !s.trim().is_empty() => s.clone(),
        Value::String(_) => return Err(RecordError::malformed("note", "note text is empty")),
        _ => return Err(RecordError::malformed("note", "expected a string")),
    };
    let age = required(obj, "age_years")?;
    let age_years = age
        .as_u64()
        .filter(|a| *a <= MAX_AGE_YEARS as u64)
        .ok_or_else(|| RecordError::InvalidAge(age.to_string()))? as u32;
    let patient_type = match required(obj, "patient_type")? {
        Value::String(s) => s
            .parse::<PatientType>()
            .map_err(|e| RecordError::malformed("patient_type", e.to_string()))?,
        _ => return Err(RecordError::malformed("patient_type", "expected a string")),
    };
    let specialty = match obj.get("specialty") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(RecordError::malformed("specialty", "expected a string")),
    };
    let ehr_extras = match obj.get("ehr_extras") {
        None | Some(Value::Null) => BTreeMap::new(),
        Some(Value::Object(map)) => map
            .iter()
            .map(|(k, v)| extra_text(v).map(|t| (k.clone(), t)))
            .collect::<Option<_>>()
            .ok_or_else(|| RecordError::malformed("ehr_extras", "values must be strings or lists of strings"))?,
        Some(_) => return Err(RecordError::malformed("ehr_extras", "expected an object")),
    };
    Ok(Encounter {
        id,
        soap: SoapNote::parse(note),
        age_years,
        patient_type,
        specialty,
        ehr_extras,
    })
}

/// Lists are joined one item per line.
fn extra_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Array(items) => items
            .iter()
            .map(|i| i.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()
            .map(|v| v.join("\n")),
        _ => None,
    }
}

/// Parse the encounter part of one dataset line.
pub fn parse_encounter(line: &str) -> Result<Encounter, RecordError> {
    encounter_from(&parse_object(line)?)
}

/// Parse a full dataset line, including the `gold` block and split tag.
pub fn parse_record(line: &str) -> Result<DatasetRecord, RecordError> {
    let obj = parse_object(line)?;
    let encounter = encounter_from(&obj)?;
    let gold = match obj.get("gold") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let mut gold: GoldAnnotation = serde_json::from_value(v.clone())
                .map_err(|e| RecordError::malformed("gold", e.to_string()))?;
            if gold.encounter_id.is_empty() {
                gold.encounter_id = encounter.id.clone();
            } else if gold.encounter_id != encounter.id {
                return Err(RecordError::malformed("gold.encounter_id", "does not match record id"));
            }
            gold.validate()
                .map_err(|e| RecordError::malformed("gold.cpt_code", e.to_string()))?;
            Some(gold)
        }
    };
    let split = match obj.get("split") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => {
            Some(SplitTag::parse(s).ok_or_else(|| RecordError::malformed("split", format!("unknown split `{s}`")))?)
        }
        Some(_) => return Err(RecordError::malformed("split", "expected a string")),
    };
    Ok(DatasetRecord { encounter, gold, split })
}

/// Render a record back to its single-line JSON form.
pub fn render_record(record: &DatasetRecord) -> String {
    let e = &record.encounter;
    let mut obj = Map::new();
    obj.insert("id".into(), Value::String(e.id.clone()));
    obj.insert("note".into(), Value::String(e.soap.raw().to_string()));
    obj.insert("age_years".into(), Value::from(e.age_years));
    obj.insert("patient_type".into(), Value::String(e.patient_type.to_string()));
    if let Some(s) = &e.specialty {
        obj.insert("specialty".into(), Value::String(s.clone()));
    }
    if !e.ehr_extras.is_empty() {
        let extras = e
            .ehr_extras
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        obj.insert("ehr_extras".into(), Value::Object(extras));
    }
    if let Some(gold) = &record.gold {
        obj.insert("gold".into(), serde_json::to_value(gold).expect("gold annotation serializes"));
    }
    if let Some(split) = record.split {
        obj.insert("split".into(), serde_json::to_value(split).expect("split serializes"));
    }
    Value::Object(obj).to_string()
}
