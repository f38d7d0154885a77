//! Append-only audit trail of pipeline stages.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::Element;
use crate::llm::GenerationParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Retrieval,
    MdmInitial,
    CriticProblem,
    CriticData,
    CriticRisk,
    Pass,
    Vote,
    Combine,
    EncounterType,
    DecisionTree,
}

impl Stage {
    pub fn critic(element: Element) -> Self {
        match element {
            Element::Problem => Stage::CriticProblem,
            Element::Data => Stage::CriticData,
            Element::Risk => Stage::CriticRisk,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Retrieval => "retrieval",
            Stage::MdmInitial => "mdm_initial",
            Stage::CriticProblem => "critic_problem",
            Stage::CriticData => "critic_data",
            Stage::CriticRisk => "critic_risk",
            Stage::Pass => "pass",
            Stage::Vote => "vote",
            Stage::Combine => "combine",
            Stage::EncounterType => "encounter_type",
            Stage::DecisionTree => "decision_tree",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatus {
    Ok,
    /// The stage failed and a fallback value was kept.
    Degraded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: usize,
    pub stage: Stage,
    pub status: AuditStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<GenerationParams>,
    /// SHA-256 of the raw provider response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_sha256: Option<String>,
    #[serde(default)]
    pub detail: String,
}

impl AuditRecord {
    pub fn new(stage: Stage, status: AuditStatus, detail: impl Into<String>) -> Self {
        Self {
            seq: 0,
            stage,
            status,
            pass: None,
            round: None,
            template: None,
            params: None,
            response_sha256: None,
            detail: detail.into(),
        }
    }

    pub fn with_pass(mut self, pass: Option<usize>) -> Self {
        self.pass = pass;
        self
    }

    pub fn with_round(mut self, round: Option<usize>) -> Self {
        self.round = round;
        self
    }

    pub fn is_degraded(&self) -> bool {
        self.status == AuditStatus::Degraded
    }
}

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Audit records with sequence numbers assigned on append.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
}

impl AuditLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, mut record: AuditRecord) {
        record.seq = self.records.len();
        self.records.push(record);
    }

    /// Append another log, renumbering its records after ours.
    pub fn append(&mut self, other: AuditLog) {
        for record in other.records {
            self.push(record);
        }
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn into_records(self) -> Vec<AuditRecord> {
        self.records
    }
}
