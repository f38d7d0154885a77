use std::fmt;

use serde_json::Value;

use super::assets::TemplateName;
use super::classify::{additional_info, invalid, optional_text, parse_data_items, parse_level, Call, LlmClient};
use super::parse::parse_json_response;
use super::template::{Bindings, BlockSwitches};
use super::{CallContext, GenerationParams, LlmError, LlmErrorKind};
use crate::audit::{AuditLog, Stage};
use crate::domain::{ComplexityLevel, Element, Encounter, MdmAssessment};
use crate::rules::{derive_data_level, DataEvidence, DataEvidenceItem};

const LEVELS: &str = "Straightforward|Low|Moderate|High";

pub fn critic_format(element: Element) -> String {
    let items = if element == Element::Data {
        r#",
  "data_items": [{"kind": "ExternalNoteReviewed|TestResultReviewed|TestOrdered|IndependentHistorian|IndependentInterpretation|DiscussionOfManagement", "description": "<item>"}]"#
    } else {
        ""
    };
    format!(
        r#"a JSON object with exactly these fields:
{{
  "revised_level": "{LEVELS}",
  "per_instruction_reasoning": ["<rule 1: followed / not followed / not applicable, and why>", "..."],
  "justification": "<justification for the revised level>"{items}
}}"#
    )
}

/// Raised when the critic's final data items do not support its data level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsistencyWarning {
    pub claimed: ComplexityLevel,
    pub derived: ComplexityLevel,
}

impl fmt::Display for ConsistencyWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ConsistencyWarning: critic set data to {} but its data items derive {}",
            self.claimed.display_name(Element::Data),
            self.derived.display_name(Element::Data)
        )
    }
}

/// Parsed critic output for one element.
#[derive(Debug, Clone, PartialEq)]
pub struct Critique {
    pub element: Element,
    pub revised_level: ComplexityLevel,
    /// Empty when the critic did not restate a justification.
    pub justification: String,
    pub findings: Vec<String>,
    /// Final data item list; only for the data critic.
    pub data_items: Option<Vec<DataEvidenceItem>>,
    pub warning: Option<ConsistencyWarning>,
}

impl Critique {
    /// A copy of `current` with this element revised. Findings accumulate
    /// across rounds; the prior justification is kept when none was given.
    pub fn apply(&self, current: &MdmAssessment) -> MdmAssessment {
        let mut next = current.clone();
        let target = next.element_mut(self.element);
        target.level = self.revised_level;
        if !self.justification.trim().is_empty() {
            target.justification = self.justification.clone();
        }
        target.findings.extend(self.findings.iter().cloned());
        if let Some(warning) = &self.warning {
            target.findings.push(warning.to_string());
        }
        if let Some(items) = &self.data_items {
            next.data_items = items.clone();
        }
        next
    }
}

fn findings_from(value: Option<&Value>, raw: &str) -> Result<Vec<String>, LlmErrorKind> {
    match value {
        Some(Value::Array(items)) => Ok(items
            .iter()
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .collect()),
        other => {
            let text = optional_text(other, "per_instruction_reasoning", raw)?;
            Ok(if text.trim().is_empty() { Vec::new() } else { vec![text] })
        }
    }
}

fn parse_critique(element: Element, raw: &str) -> Result<Critique, LlmErrorKind> {
    let required: &[&str] = if element == Element::Data {
        &["revised_level", "per_instruction_reasoning", "data_items"]
    } else {
        &["revised_level", "per_instruction_reasoning"]
    };
    let record = parse_json_response(raw, required)?;
    let revised_level = parse_level(record.get("revised_level"), "revised_level", element, raw)?;
    let findings = findings_from(record.get("per_instruction_reasoning"), raw)?;
    let justification = optional_text(record.get("justification"), "justification", raw)?;
    let (data_items, warning) = if element == Element::Data {
        let items = parse_data_items(record.get("data_items"), "data_items", raw)?;
        if record.get("data_items").is_some_and(Value::is_null) {
            return Err(invalid("data_items", "expected a list of items", raw));
        }
        let derived = derive_data_level(&items.iter().cloned().collect::<DataEvidence>());
        let warning = (derived != revised_level).then_some(ConsistencyWarning {
            claimed: revised_level,
            derived,
        });
        (Some(items), warning)
    } else {
        (None, None)
    };
    Ok(Critique {
        element,
        revised_level,
        justification,
        findings,
        data_items,
        warning,
    })
}

/// Position of a critic call inside the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CriticCall {
    pub pass: usize,
    pub round: usize,
    pub rounds: usize,
}

impl LlmClient {
    /// Review one element of `current` against its checklist.
    pub async fn critique_element(
        &self,
        element: Element,
        current: &MdmAssessment,
        encounter: &Encounter,
        params: &GenerationParams,
        position: CriticCall,
        audit: &mut AuditLog,
    ) -> Result<Critique, LlmError> {
        let template = TemplateName::critic(element);
        let prior = current.element(element);
        let info = additional_info(encounter);
        let mut bindings = Bindings::new();
        bindings.insert("checklist".into(), self.templates().checklist(element).to_string());
        bindings.insert("soap_note".into(), encounter.soap.raw().to_string());
        bindings.insert("prior_level".into(), prior.level.display_name(element).to_string());
        bindings.insert("prior_justification".into(), prior.justification.clone());
        bindings.insert("format_instructions".into(), critic_format(element));
        if element == Element::Data {
            let items = serde_json::to_string(&current.data_items).expect("data items serialize");
            bindings.insert("prior_data_items".into(), items);
        }
        let mut blocks = BlockSwitches::new();
        if info.is_empty() {
            blocks.insert("additional_info".into(), false);
        } else {
            bindings.insert("additional_info".into(), info);
        }
        let call = Call {
            stage: Stage::critic(element),
            template,
            bindings,
            blocks,
            params,
            context: CallContext {
                encounter_id: encounter.id.clone(),
                template: template.as_str().to_string(),
                pass: Some(position.pass),
                round: Some(position.round),
                element: Some(element),
                prior_level: Some(prior.level),
                call_index: position.pass * position.rounds.max(1) + position.round,
            },
        };
        self.invoke(call, audit, |raw| parse_critique(element, raw)).await
    }
}
