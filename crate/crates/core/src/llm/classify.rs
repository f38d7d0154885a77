use std::sync::Arc;

use serde_json::{json, Value};

use super::assets::{TemplateName, TemplateSet};
use super::parse::{parse_json_response, JsonRecord};
use super::template::{render_prompt, Bindings, BlockSwitches};
use super::{CallContext, CompletionRequest, GenerationParams, LlmError, LlmErrorKind, Provider};
use crate::audit::{sha256_hex, AuditLog, AuditRecord, AuditStatus, Stage};
use crate::domain::{
    level_from_name, ComplexityLevel, Element, ElementAssessment, Encounter, EncounterType, MdmAssessment, PerElement,
};
use crate::retrieval::Exemplar;
use crate::rules::DataEvidenceItem;

pub const ENCOUNTER_TYPE_FORMAT: &str = r#"a JSON object with exactly these fields:
{"encounter_type": "Office or Outpatient Service" | "Preventive Medicine" | "<other setting>", "explanation": "<one or two sentences>"}"#;

pub const MDM_INITIAL_FORMAT: &str = r#"a JSON object with exactly these fields:
{
  "problem": {"level": "Straightforward|Low|Moderate|High", "justification": "<why>", "cot": "<step-by-step reasoning>"},
  "data": {"level": "Straightforward|Low|Moderate|High", "justification": "<why>", "cot": "<step-by-step reasoning>"},
  "risk": {"level": "Straightforward|Low|Moderate|High", "justification": "<why>", "cot": "<step-by-step reasoning>"},
  "data_items": [{"kind": "ExternalNoteReviewed|TestResultReviewed|TestOrdered|IndependentHistorian|IndependentInterpretation|DiscussionOfManagement", "description": "<item>"}]
}"#;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncounterTypeOutput {
    pub encounter_type: EncounterType,
    pub explanation: String,
}

/// Issues classifier and critic calls against one provider. Cheap to clone
/// and safe to share across concurrent passes.
#[derive(Clone)]
pub struct LlmClient {
    provider: Arc<dyn Provider>,
    templates: Arc<TemplateSet>,
}

/// One provider call: what to render and where it sits in the pipeline.
pub(super) struct Call<'a> {
    pub stage: Stage,
    pub template: TemplateName,
    pub bindings: Bindings,
    pub blocks: BlockSwitches,
    pub params: &'a GenerationParams,
    pub context: CallContext,
}

pub(super) fn invalid(field: &str, reason: impl Into<String>, raw: &str) -> LlmErrorKind {
    LlmErrorKind::InvalidField {
        field: field.to_string(),
        reason: reason.into(),
        raw: raw.to_string(),
    }
}

pub(super) fn parse_level(value: Option<&Value>, field: &str, element: Element, raw: &str) -> Result<ComplexityLevel, LlmErrorKind> {
    let name = value
        .and_then(Value::as_str)
        .ok_or_else(|| invalid(field, "expected a level name string", raw))?;
    level_from_name(name, element).map_err(|_| LlmErrorKind::UnknownLevelName {
        name: name.to_string(),
        raw: raw.to_string(),
    })
}

pub(super) fn optional_text(value: Option<&Value>, field: &str, raw: &str) -> Result<String, LlmErrorKind> {
    match value {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(s.clone()),
        // reasoning may come back as a list of per-instruction strings
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| match v {
                Value::String(s) => Ok(s.clone()),
                other => Ok(other.to_string()),
            })
            .collect::<Result<Vec<_>, LlmErrorKind>>()
            .map(|parts| parts.join("\n")),
        Some(other) if other.is_object() => Ok(serde_json::to_string(other).unwrap_or_default()),
        Some(_) => Err(invalid(field, "expected text", raw)),
    }
}

pub(super) fn parse_data_items(value: Option<&Value>, field: &str, raw: &str) -> Result<Vec<DataEvidenceItem>, LlmErrorKind> {
    match value {
        None | Some(Value::Null) => Ok(Vec::new()),
        Some(v @ Value::Array(_)) => {
            serde_json::from_value(v.clone()).map_err(|e| invalid(field, e.to_string(), raw))
        }
        Some(_) => Err(invalid(field, "expected a list of items", raw)),
    }
}

/// Few-shot block: one `### Example {i}` section per exemplar with its
/// note, element levels, justifications and reasoning as JSON.
pub fn render_exemplars(exemplars: &[Exemplar]) -> String {
    let mut out = String::new();
    for (i, ex) in exemplars.iter().enumerate() {
        let elements: serde_json::Map<String, Value> = Element::ALL
            .iter()
            .map(|&e| {
                (
                    e.as_str().to_string(),
                    json!({
                        "level": ex.element_levels.get(e).display_name(e),
                        "justification": ex.gold_justifications.get(e),
                        "cot": ex.cot_reasoning.get(e),
                    }),
                )
            })
            .collect();
        let body = json!({ "soap_note": ex.soap_text, "output": elements });
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("### Example {}\n", i + 1));
        out.push_str(&serde_json::to_string_pretty(&body).expect("json values serialize"));
        out.push('\n');
    }
    out
}

/// EHR extras and specialty as `- key: value` lines.
pub(super) fn additional_info(encounter: &Encounter) -> String {
    let mut lines = Vec::new();
    if let Some(specialty) = &encounter.specialty {
        lines.push(format!("- specialty: {specialty}"));
    }
    for (key, value) in &encounter.ehr_extras {
        lines.push(format!("- {key}: {value}"));
    }
    lines.join("\n")
}

impl LlmClient {
    pub fn new(provider: Arc<dyn Provider>, templates: Arc<TemplateSet>) -> Self {
        Self { provider, templates }
    }

    pub fn with_builtin_templates(provider: Arc<dyn Provider>) -> Self {
        Self::new(provider, Arc::new(TemplateSet::builtin()))
    }

    pub fn provider(&self) -> &Arc<dyn Provider> {
        &self.provider
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    /// Render, call and parse, appending exactly one audit record.
    pub(super) async fn invoke<T>(
        &self,
        call: Call<'_>,
        audit: &mut AuditLog,
        parse: impl FnOnce(&str) -> Result<T, LlmErrorKind>,
    ) -> Result<T, LlmError> {
        let mut record = AuditRecord::new(call.stage, AuditStatus::Ok, "")
            .with_pass(call.context.pass)
            .with_round(call.context.round);
        record.template = Some(call.template.as_str().to_string());
        record.params = Some(call.params.clone());

        let outcome = async {
            let prompt = render_prompt(self.templates.get(call.template), &call.bindings, &call.blocks)?;
            let request = CompletionRequest {
                prompt,
                params: call.params.clone(),
                context: call.context.clone(),
            };
            let raw = self.provider.complete(&request).await?;
            Ok::<_, LlmErrorKind>(raw)
        }
        .await;

        let result = match outcome {
            Ok(raw) => {
                record.response_sha256 = Some(sha256_hex(&raw));
                parse(&raw)
            }
            Err(kind) => Err(kind),
        };
        if let Err(kind) = &result {
            record.status = AuditStatus::Failed;
            record.detail = kind.to_string();
        }
        audit.push(record);
        result.map_err(|kind| LlmError::new(call.stage, kind))
    }

    pub async fn classify_encounter_type(
        &self,
        encounter: &Encounter,
        params: &GenerationParams,
        audit: &mut AuditLog,
    ) -> Result<EncounterTypeOutput, LlmError> {
        let bindings: Bindings = [
            ("soap_note", encounter.soap.raw().to_string()),
            ("patient_type", encounter.patient_type.as_str().to_string()),
            ("age_years", encounter.age_years.to_string()),
            ("format_instructions", ENCOUNTER_TYPE_FORMAT.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        let call = Call {
            stage: Stage::EncounterType,
            template: TemplateName::EncounterType,
            bindings,
            blocks: BlockSwitches::new(),
            params,
            context: CallContext {
                encounter_id: encounter.id.clone(),
                template: TemplateName::EncounterType.as_str().to_string(),
                ..Default::default()
            },
        };
        self.invoke(call, audit, |raw| {
            let record = parse_json_response(raw, &["encounter_type", "explanation"])?;
            let label = record
                .str_field("encounter_type")
                .ok_or_else(|| invalid("encounter_type", "expected a string", raw))?;
            let encounter_type =
                EncounterType::from_label(label).map_err(|_| invalid("encounter_type", "empty label", raw))?;
            let explanation = optional_text(record.get("explanation"), "explanation", raw)?;
            Ok(EncounterTypeOutput {
                encounter_type,
                explanation,
            })
        })
        .await
    }

    /// Initial per-element assessment for one pass. An empty exemplar list
    /// renders the zero-shot prompt without the examples section.
    pub async fn classify_mdm_initial(
        &self,
        encounter: &Encounter,
        exemplars: &[Exemplar],
        params: &GenerationParams,
        pass: usize,
        audit: &mut AuditLog,
    ) -> Result<MdmAssessment, LlmError> {
        let info = additional_info(encounter);
        let mut bindings = Bindings::new();
        bindings.insert("text".into(), encounter.soap.raw().to_string());
        bindings.insert("format_instructions".into(), MDM_INITIAL_FORMAT.to_string());
        let mut blocks = BlockSwitches::new();
        if exemplars.is_empty() {
            blocks.insert("examples".into(), false);
        } else {
            bindings.insert("few_shot_examples".into(), render_exemplars(exemplars));
        }
        if info.is_empty() {
            blocks.insert("additional_info".into(), false);
        } else {
            bindings.insert("additional_info".into(), info);
        }
        let call = Call {
            stage: Stage::MdmInitial,
            template: TemplateName::MdmInitial,
            bindings,
            blocks,
            params,
            context: CallContext {
                encounter_id: encounter.id.clone(),
                template: TemplateName::MdmInitial.as_str().to_string(),
                pass: Some(pass),
                call_index: pass,
                ..Default::default()
            },
        };
        self.invoke(call, audit, parse_mdm_output).await
    }
}

fn parse_element(record: &JsonRecord, element: Element, raw: &str) -> Result<ElementAssessment, LlmErrorKind> {
    let field = element.as_str();
    let Some(Value::Object(obj)) = record.get(field) else {
        return Err(invalid(field, "expected an object with level and justification", raw));
    };
    let level = parse_level(obj.get("level"), &format!("{field}.level"), element, raw)?;
    let justification = optional_text(obj.get("justification"), &format!("{field}.justification"), raw)?;
    if justification.trim().is_empty() {
        return Err(invalid(&format!("{field}.justification"), "justification is empty", raw));
    }
    let cot = optional_text(obj.get("cot").or_else(|| obj.get("reasoning")), &format!("{field}.cot"), raw)?;
    Ok(ElementAssessment {
        level,
        justification,
        cot,
        findings: Vec::new(),
    })
}

fn parse_mdm_output(raw: &str) -> Result<MdmAssessment, LlmErrorKind> {
    let record = parse_json_response(raw, &["problem", "data", "risk"])?;
    let elements = PerElement::new(
        parse_element(&record, Element::Problem, raw)?,
        parse_element(&record, Element::Data, raw)?,
        parse_element(&record, Element::Risk, raw)?,
    );
    let data_items = parse_data_items(record.get("data_items"), "data_items", raw)?;
    Ok(MdmAssessment { elements, data_items })
}
