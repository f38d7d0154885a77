use std::collections::BTreeMap;

use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("response is not a single JSON object: {reason}")]
    NotJson { raw: String, reason: String },
    #[error("response is missing fields: {}", missing.join(", "))]
    SchemaMismatch { missing: Vec<String>, raw: String },
}

impl ParseError {
    pub fn raw(&self) -> &str {
        match self {
            ParseError::NotJson { raw, .. } | ParseError::SchemaMismatch { raw, .. } => raw,
        }
    }
}

/// A parsed response object split into schema fields and everything else.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JsonRecord {
    pub fields: BTreeMap<String, Value>,
    pub extras: BTreeMap<String, Value>,
}

impl JsonRecord {
    /// A schema field or, failing that, an extra field.
    pub fn get(&self, name: &str) -> Option<&Value> {
        self.fields.get(name).or_else(|| self.extras.get(name))
    }

    pub fn str_field(&self, name: &str) -> Option<&str> {
        self.get(name).and_then(Value::as_str)
    }

    pub fn to_object(&self) -> Map<String, Value> {
        self.fields
            .iter()
            .chain(self.extras.iter())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

/// Strip surrounding whitespace and one pair of Markdown code fences.
fn repair(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    // the opening fence may carry a language tag on the same line
    let body = match rest.find('\n') {
        Some(nl) if rest[..nl].chars().all(|c| c.is_ascii_alphanumeric()) => &rest[nl + 1..],
        _ => return trimmed,
    };
    match body.trim_end().strip_suffix("```") {
        Some(inner) => inner.trim(),
        None => trimmed,
    }
}

/// Parse a provider response as one JSON object carrying every field in
/// `required`. Code fences and surrounding whitespace are removed first;
/// nothing else is repaired.
pub fn parse_json_response(raw: &str, required: &[&str]) -> Result<JsonRecord, ParseError> {
    let candidate = repair(raw);
    let value: Value = serde_json::from_str(candidate).map_err(|e| ParseError::NotJson {
        raw: raw.to_string(),
        reason: e.to_string(),
    })?;
    let Value::Object(object) = value else {
        return Err(ParseError::NotJson {
            raw: raw.to_string(),
            reason: "top-level value is not an object".into(),
        });
    };
    let missing: Vec<String> = required
        .iter()
        .filter(|f| !object.contains_key(**f))
        .map(|f| f.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ParseError::SchemaMismatch {
            missing,
            raw: raw.to_string(),
        });
    }
    let mut record = JsonRecord::default();
    for (key, value) in object {
        if required.contains(&key.as_str()) {
            record.fields.insert(key, value);
        } else {
            record.extras.insert(key, value);
        }
    }
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    const SCHEMA: &[&str] = &["level", "reasoning"];

    #[derive(Debug)]
    enum Expect {
        Ok,
        NotJson,
        Missing(&'static [&'static str]),
    }

    // Expected outcomes fixed before the parser was written.
    const CORPUS: &[(&str, Expect)] = &[
        (r#"{"level":"Low","reasoning":"r"}"#, Expect::Ok),
        ("  \n{\"level\":\"Low\",\"reasoning\":\"r\"}\n\n", Expect::Ok),
        ("```json\n{\"level\":\"Low\",\"reasoning\":\"r\"}\n```", Expect::Ok),
        ("```\n{\"level\":\"Low\",\"reasoning\":\"r\"}\n```\n", Expect::Ok),
        ("Here is the JSON:\n{\"level\":\"Low\",\"reasoning\":\"r\"}", Expect::NotJson),
        ("{\"level\":\"Low\",\"reasoning\":\"r\"}\nHope this helps!", Expect::NotJson),
        ("{\"level\":\"Low\",\"reasoning\":\"r", Expect::NotJson),
        ("```json\n{\"level\":\"Low\",\"reasoning\":\"r\"}", Expect::NotJson),
        ("[{\"level\":\"Low\",\"reasoning\":\"r\"}]", Expect::NotJson),
        ("", Expect::NotJson),
        ("{\"level\":\"Low\"}", Expect::Missing(&["reasoning"])),
        ("{\"foo\":1}", Expect::Missing(&["level", "reasoning"])),
        ("{'level':'Low','reasoning':'r'}", Expect::NotJson),
        ("```json\nprose {\"level\":\"Low\",\"reasoning\":\"r\"}\n```", Expect::NotJson),
    ];

    #[test]
    fn malformed_output_corpus() {
        for (raw, expect) in CORPUS {
            let got = parse_json_response(raw, SCHEMA);
            match (expect, &got) {
                (Expect::Ok, Ok(rec)) => assert_eq!(rec.fields["level"], json!("Low"), "{raw:?}"),
                (Expect::NotJson, Err(ParseError::NotJson { raw: kept, .. })) => assert_eq!(kept, raw),
                (Expect::Missing(fields), Err(ParseError::SchemaMismatch { missing, raw: kept })) => {
                    assert_eq!(missing, fields);
                    assert_eq!(kept, raw);
                }
                _ => panic!("{raw:?}: expected {expect:?}, got {got:?}"),
            }
        }
    }

    #[test]
    fn extras_are_preserved() {
        let rec = parse_json_response(r#"{"level":"Low","reasoning":"r","confidence":0.9}"#, SCHEMA).unwrap();
        assert_eq!(rec.extras.len(), 1);
        assert_eq!(rec.get("confidence"), Some(&json!(0.9)));
        assert_eq!(rec.str_field("level"), Some("Low"));
    }

    proptest! {
        #[test]
        fn serialized_records_round_trip(level in "[A-Za-z]{1,12}", reasoning in any::<String>(), extra in any::<i64>()) {
            let value = json!({"level": level, "reasoning": reasoning, "extra": extra});
            let raw = serde_json::to_string_pretty(&value).unwrap();
            let rec = parse_json_response(&raw, SCHEMA).unwrap();
            prop_assert_eq!(&rec.fields["level"], &value["level"]);
            prop_assert_eq!(&rec.fields["reasoning"], &value["reasoning"]);
            prop_assert_eq!(Value::Object(rec.to_object()), value);
        }
    }
}
