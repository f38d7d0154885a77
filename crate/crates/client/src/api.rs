//! JSON bodies exchanged with the service.

use std::collections::BTreeMap;
use std::fmt;

use emcoder_core::audit::AuditRecord;
use emcoder_core::domain::{CodingResult, DatasetRecord, GoldAnnotation, PatientType, SplitTag};
use emcoder_core::eval::RunMetrics;
use serde::{Deserialize, Serialize};

/// Review status of an encounter. An annotation outranks a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncounterStatus {
    Uncoded,
    Coded,
    Annotated,
}

impl EncounterStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            EncounterStatus::Uncoded => "uncoded",
            EncounterStatus::Coded => "coded",
            EncounterStatus::Annotated => "annotated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uncoded" => Some(EncounterStatus::Uncoded),
            "coded" => Some(EncounterStatus::Coded),
            "annotated" => Some(EncounterStatus::Annotated),
            _ => None,
        }
    }
}

impl fmt::Display for EncounterStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncounterSummary {
    pub id: String,
    pub age_years: u32,
    pub patient_type: PatientType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specialty: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitTag>,
    pub status: EncounterStatus,
    /// Predicted code, when coded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted_cpt: Option<String>,
    /// Gold code, when annotated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_cpt: Option<String>,
    #[serde(default)]
    pub degraded_stages: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncounterPage {
    pub items: Vec<EncounterSummary>,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncounterFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specialty: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SectionText {
    pub header: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterDetail {
    pub id: String,
    pub note: String,
    pub sections: Vec<SectionText>,
    pub age_years: u32,
    pub patient_type: PatientType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specialty: Option<String>,
    #[serde(default)]
    pub ehr_extras: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitTag>,
    pub status: EncounterStatus,
    #[serde(default)]
    pub gold: Option<GoldAnnotation>,
    #[serde(default)]
    pub result: Option<CodingResult>,
}

impl EncounterDetail {
    pub fn from_record(record: &DatasetRecord, result: Option<CodingResult>) -> Self {
        let e = &record.encounter;
        let sections = e
            .soap
            .section_order()
            .into_iter()
            .map(|s| SectionText {
                header: s.header().to_string(),
                text: e.soap.section(s).to_string(),
            })
            .collect();
        Self {
            id: e.id.clone(),
            note: e.soap.raw().to_string(),
            sections,
            age_years: e.age_years,
            patient_type: e.patient_type,
            specialty: e.specialty.clone(),
            ehr_extras: e.ehr_extras.clone(),
            split: record.split,
            status: status_of(record.gold.is_some(), result.is_some()),
            gold: record.gold.clone(),
            result,
        }
    }
}

pub fn status_of(annotated: bool, coded: bool) -> EncounterStatus {
    match (annotated, coded) {
        (true, _) => EncounterStatus::Annotated,
        (false, true) => EncounterStatus::Coded,
        (false, false) => EncounterStatus::Uncoded,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationAck {
    pub id: String,
    pub gold: GoldAnnotation,
    /// Whether the annotation was added to the exemplar store.
    pub indexed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub encounters: usize,
    pub coded: usize,
    pub annotated: usize,
    /// Encounters with both a prediction and a gold annotation.
    pub scored: usize,
    pub degraded_stages: usize,
    #[serde(default)]
    pub metrics: Option<RunMetrics>,
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error_code: String,
    pub message: String,
    pub request_id: String,
    #[serde(default)]
    pub audit: Vec<AuditRecord>,
}

pub mod codes {
    pub const INVALID_REQUEST: &str = "invalid_request";
    pub const NOT_FOUND: &str = "not_found";
    pub const METHOD_NOT_ALLOWED: &str = "method_not_allowed";
    pub const UNCODEABLE_ENCOUNTER: &str = "uncodeable_encounter";
    pub const PROVIDER_FAILURE: &str = "provider_failure";
    pub const INTERNAL: &str = "internal_error";
}
