//! Shared vocabulary: encounters, complexity levels, assessments, gold
//! annotations and coding results.

mod level;
mod record;
mod soap;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::audit::AuditRecord;
use crate::rules::{combine_mdm, majority_vote, DataEvidenceItem};

pub use level::{level_from_name, ComplexityLevel, Element, LevelError, PerElement};
pub use record::{parse_encounter, parse_record, render_record, DatasetRecord, RecordError, SplitTag};
pub use soap::{Segment, SoapNote, SoapSection};

pub const MAX_AGE_YEARS: u32 = 150;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PatientType {
    New,
    Established,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown patient type `{0}` (expected New or Established)")]
pub struct PatientTypeError(pub String);

impl PatientType {
    pub fn as_str(self) -> &'static str {
        match self {
            PatientType::New => "New",
            PatientType::Established => "Established",
        }
    }
}

impl fmt::Display for PatientType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatientType {
    type Err = PatientTypeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "new" => Ok(PatientType::New),
            "established" => Ok(PatientType::Established),
            _ => Err(PatientTypeError(s.to_string())),
        }
    }
}

impl Serialize for PatientType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for PatientType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Visit type as determined by the encounter-type classifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EncounterType {
    OfficeOrOutpatient,
    PreventiveMedicine,
    /// Any other visit type; the label is never empty.
    Other(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("encounter type label is empty")]
pub struct EmptyEncounterLabel;

impl EncounterType {
    /// Map a classifier label onto a known type. Unrecognized labels become
    /// [`EncounterType::Other`] with the trimmed label.
    pub fn from_label(label: &str) -> Result<Self, EmptyEncounterLabel> {
        let trimmed = label.trim();
        if trimmed.is_empty() {
            return Err(EmptyEncounterLabel);
        }
        let key: String = trimmed
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        Ok(match key.as_str() {
            "officeoroutpatientservice" | "officeoroutpatientservices" | "officeoroutpatient"
            | "officeoutpatient" | "officeoutpatientservice" | "office" | "outpatient"
            | "officevisit" | "outpatientvisit" | "officeorotheroutpatientservice"
            | "officeorotheroutpatientservices" => EncounterType::OfficeOrOutpatient,
            "preventivemedicine" | "preventivemedicineservice" | "preventivemedicineservices"
            | "preventive" | "preventivevisit" => EncounterType::PreventiveMedicine,
            _ => EncounterType::Other(trimmed.to_string()),
        })
    }

    pub fn label(&self) -> &str {
        match self {
            EncounterType::OfficeOrOutpatient => "Office or Outpatient Service",
            EncounterType::PreventiveMedicine => "Preventive Medicine",
            EncounterType::Other(label) => label,
        }
    }
}

impl fmt::Display for EncounterType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for EncounterType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for EncounterType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        EncounterType::from_label(&s).map_err(serde::de::Error::custom)
    }
}

/// A patient visit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Encounter {
    pub id: String,
    pub soap: SoapNote,
    pub age_years: u32,
    pub patient_type: PatientType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specialty: Option<String>,
    /// Structured EHR context such as problems, medications and orders.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub ehr_extras: BTreeMap<String, String>,
}

/// True for a five-digit CPT code such as `99203`.
pub fn is_cpt_code(code: &str) -> bool {
    code.len() == 5 && code.bytes().all(|b| b.is_ascii_digit())
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ElementAssessment {
    pub level: ComplexityLevel,
    #[serde(default)]
    pub justification: String,
    #[serde(default)]
    pub cot: String,
    /// Critic checklist findings, in critique order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub findings: Vec<String>,
}

impl ElementAssessment {
    pub fn new(level: ComplexityLevel, justification: impl Into<String>) -> Self {
        Self {
            level,
            justification: justification.into(),
            ..Default::default()
        }
    }
}

/// Per-element complexity levels with their justifications and reasoning.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MdmAssessment {
    #[serde(flatten)]
    pub elements: PerElement<ElementAssessment>,
    /// Data items backing the data level, when the classifier listed them.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub data_items: Vec<DataEvidenceItem>,
}

impl MdmAssessment {
    pub fn from_levels(levels: PerElement<ComplexityLevel>) -> Self {
        Self {
            elements: levels.map(|_, l| ElementAssessment::new(*l, "")),
            data_items: Vec::new(),
        }
    }

    pub fn element(&self, element: Element) -> &ElementAssessment {
        self.elements.get(element)
    }

    pub fn element_mut(&mut self, element: Element) -> &mut ElementAssessment {
        self.elements.get_mut(element)
    }

    pub fn level(&self, element: Element) -> ComplexityLevel {
        self.elements.get(element).level
    }

    pub fn levels(&self) -> PerElement<ComplexityLevel> {
        self.elements.map(|_, e| e.level)
    }

    /// Overall MDM level under the two-of-three rule.
    pub fn mdm_level(&self) -> ComplexityLevel {
        combine_mdm(self.level(Element::Problem), self.level(Element::Data), self.level(Element::Risk))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AgreementFlag {
    Platinum,
    Disagreement,
    #[default]
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotationError {
    #[error("`{0}` is not a five-digit CPT code")]
    InvalidCptCode(String),
    #[error("annotation encounter id is empty")]
    MissingEncounterId,
}

/// Expert labels for one encounter.
///
/// The wire form is flat (`problem`, `data`, `risk`, `*_justification`), the
/// same shape as the `gold` block of a dataset record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    #[serde(default)]
    pub encounter_id: String,
    pub cpt_code: String,
    pub problem: ComplexityLevel,
    pub data: ComplexityLevel,
    pub risk: ComplexityLevel,
    #[serde(default)]
    pub problem_justification: String,
    #[serde(default)]
    pub data_justification: String,
    #[serde(default)]
    pub risk_justification: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_justifications: Option<PerElement<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cot: Option<PerElement<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub data_items: Vec<DataEvidenceItem>,
    #[serde(default)]
    pub annotator: String,
    #[serde(default, alias = "agreement")]
    pub agreement_flag: AgreementFlag,
    /// Explicit MDM level, kept only for auditing against the derived one.
    #[serde(default, rename = "mdm", skip_serializing_if = "Option::is_none")]
    pub mdm_override: Option<ComplexityLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encounter_type: Option<EncounterType>,
}

impl GoldAnnotation {
    pub fn validate(&self) -> Result<(), AnnotationError> {
        if self.encounter_id.is_empty() {
            return Err(AnnotationError::MissingEncounterId);
        }
        if !is_cpt_code(&self.cpt_code) {
            return Err(AnnotationError::InvalidCptCode(self.cpt_code.clone()));
        }
        Ok(())
    }

    pub fn levels(&self) -> PerElement<ComplexityLevel> {
        PerElement::new(self.problem, self.data, self.risk)
    }

    pub fn justifications(&self) -> PerElement<&str> {
        PerElement::new(
            self.problem_justification.as_str(),
            self.data_justification.as_str(),
            self.risk_justification.as_str(),
        )
    }

    /// Levels and gold justifications as an assessment.
    pub fn mdm(&self) -> MdmAssessment {
        let cot = self.cot.clone().unwrap_or_default();
        let just = self.justifications();
        MdmAssessment {
            elements: PerElement::from_fn(|e| ElementAssessment {
                level: *self.levels().get(e),
                justification: just.get(e).to_string(),
                cot: cot.get(e).clone(),
                findings: Vec::new(),
            }),
            data_items: self.data_items.clone(),
        }
    }

    /// Gold MDM level, always derived from the element levels.
    pub fn mdm_level(&self) -> ComplexityLevel {
        combine_mdm(self.problem, self.data, self.risk)
    }
}

/// Final output of the coding pipeline for one encounter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodingResult {
    pub encounter_id: String,
    pub encounter_type: EncounterType,
    #[serde(default)]
    pub encounter_type_explanation: String,
    pub patient_type: PatientType,
    pub age_years: u32,
    pub mdm_level: ComplexityLevel,
    /// One vote per successful pass, in pass order.
    pub per_element_votes: PerElement<Vec<ComplexityLevel>>,
    pub final_elements: MdmAssessment,
    pub cpt_code: String,
    pub justification: String,
    #[serde(default)]
    pub exemplar_ids: Vec<String>,
    pub audit: Vec<AuditRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResultInvariantError {
    #[error("vote lists have unequal lengths")]
    RaggedVotes,
    #[error("vote list for {0} is empty")]
    EmptyVotes(Element),
    #[error("final {0} level does not equal the majority vote")]
    VoteMismatch(Element),
    #[error("mdm level does not equal the two-of-three combination")]
    MdmMismatch,
    #[error("audit sequence is not strictly increasing")]
    AuditOrder,
}

impl CodingResult {
    /// Number of votes behind each element level.
    pub fn k(&self) -> usize {
        self.per_element_votes.problem.len()
    }

    /// Check the structural invariants tying votes, levels and audit together.
    pub fn check_invariants(&self) -> Result<(), ResultInvariantError> {
        let k = self.k();
        for (element, votes) in self.per_element_votes.iter() {
            if votes.len() != k {
                return Err(ResultInvariantError::RaggedVotes);
            }
            let voted = majority_vote(votes).map_err(|_| ResultInvariantError::EmptyVotes(element))?;
            if voted != self.final_elements.level(element) {
                return Err(ResultInvariantError::VoteMismatch(element));
            }
        }
        if self.mdm_level != self.final_elements.mdm_level() {
            return Err(ResultInvariantError::MdmMismatch);
        }
        if self.audit.windows(2).any(|w| w[0].seq >= w[1].seq) {
            return Err(ResultInvariantError::AuditOrder);
        }
        Ok(())
    }

    pub fn degraded_count(&self) -> usize {
        self.audit.iter().filter(|a| a.is_degraded()).count()
    }
}
