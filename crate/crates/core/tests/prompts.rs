mod support;

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use emcoder_core::audit::AuditLog;
use emcoder_core::domain::{ComplexityLevel, Element, PerElement};
use emcoder_core::llm::{
    critic_format, render_prompt, Bindings, BlockSwitches, CompletionRequest, LlmClient, Prompt, Provider,
    ProviderError, ProviderIdentity, TemplateError, TemplateName, TemplateSet, ENCOUNTER_TYPE_FORMAT,
    MDM_INITIAL_FORMAT,
};
use emcoder_core::retrieval::Exemplar;
use support::*;

const NOTE: &str = "SUBJECTIVE\nEar pain after swimming.\n\nOBJECTIVE\nCanal erythematous.\n\nASSESSMENT AND PLAN\nAcute otitis externa. Keep ear dry.\n";

fn bindings(pairs: &[(&str, &str)]) -> Bindings {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

/// Every placeholder a template uses, bound to fixed values.
fn fixed_bindings(name: TemplateName, set: &TemplateSet) -> Bindings {
    let critic_fmt_for = |e: Element| critic_format(e);
    match name {
        TemplateName::EncounterType => bindings(&[
            ("soap_note", NOTE),
            ("patient_type", "New"),
            ("age_years", "24"),
            ("format_instructions", ENCOUNTER_TYPE_FORMAT),
        ]),
        TemplateName::MdmInitial => bindings(&[
            ("text", NOTE),
            ("few_shot_examples", "### Example 1\n{\"fixed\": true}\n"),
            ("additional_info", "- medications: none"),
            ("format_instructions", MDM_INITIAL_FORMAT),
        ]),
        critic => {
            let element = match critic {
                TemplateName::CriticProblem => Element::Problem,
                TemplateName::CriticData => Element::Data,
                _ => Element::Risk,
            };
            let mut b = bindings(&[
                ("soap_note", NOTE),
                ("additional_info", "- medications: none"),
                ("prior_level", "Low"),
                ("prior_justification", "fixed justification"),
            ]);
            b.insert("checklist".into(), set.checklist(element).to_string());
            b.insert("format_instructions".into(), critic_fmt_for(element));
            if element == Element::Data {
                b.insert("prior_data_items".into(), "[]".into());
            }
            b
        }
    }
}

fn golden_path(name: TemplateName) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.txt"))
}

fn as_golden(prompt: &Prompt) -> String {
    format!("=== system ===\n{}\n=== user ===\n{}\n", prompt.system, prompt.user)
}

#[test]
fn rendered_templates_match_golden_files() {
    let set = TemplateSet::builtin();
    for name in TemplateName::ALL {
        let prompt = render_prompt(set.get(name), &fixed_bindings(name, &set), &BlockSwitches::new()).unwrap();
        assert!(!prompt.system.contains("{{") && !prompt.user.contains("{{"), "{name}");
        assert!(!prompt.system.contains("{%") && !prompt.user.contains("{%"), "{name}");
        let rendered = as_golden(&prompt);
        let path = golden_path(name);
        if std::env::var_os("EMCODER_UPDATE_GOLDEN").is_some() {
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(&path, &rendered).unwrap();
        }
        let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(rendered, expected, "{name} drifted from its golden file");
    }
}

#[test]
fn every_required_placeholder_is_enforced() {
    let set = TemplateSet::builtin();
    for name in TemplateName::ALL {
        let template = set.get(name);
        let full = fixed_bindings(name, &set);
        for required in template.required_placeholders() {
            let mut partial = full.clone();
            partial.remove(&required);
            assert_eq!(
                render_prompt(template, &partial, &BlockSwitches::new()),
                Err(TemplateError::MissingBinding(required.clone())),
                "{name} without {required}"
            );
        }
        assert!(template.required_placeholders().contains("format_instructions"), "{name}");
    }
}

#[test]
fn zero_shot_prompt_has_no_examples_section() {
    let set = TemplateSet::builtin();
    let template = set.get(TemplateName::MdmInitial);
    let mut b = fixed_bindings(TemplateName::MdmInitial, &set);
    b.remove("few_shot_examples");
    let blocks: BlockSwitches = [("examples".to_string(), false)].into();
    let prompt = render_prompt(template, &b, &blocks).unwrap();
    assert!(!prompt.system.contains("Examples"));
    assert!(!prompt.system.contains("### Example"));
}

#[test]
fn encounter_prompt_carries_role_and_note() {
    let set = TemplateSet::builtin();
    let prompt = render_prompt(
        set.get(TemplateName::EncounterType),
        &fixed_bindings(TemplateName::EncounterType, &set),
        &BlockSwitches::new(),
    )
    .unwrap();
    assert!(prompt.system.starts_with("You are a medical coding assistant"));
    assert!(prompt.user.contains(NOTE));
    assert!(prompt.user.contains("DO NOT ADD any content before or after the JSON."));
}

struct Capture {
    reply: String,
    seen: Mutex<Vec<Prompt>>,
}

#[async_trait]
impl Provider for Capture {
    fn identity(&self) -> ProviderIdentity {
        ProviderIdentity {
            provider: "capture".into(),
            model: "none".into(),
        }
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        self.seen.lock().unwrap().push(request.prompt.clone());
        Ok(self.reply.clone())
    }
}

fn exemplar(id: &str) -> Exemplar {
    Exemplar {
        id: id.into(),
        soap_text: format!("note {id}"),
        gold_justifications: PerElement::new("p".into(), "d".into(), "r".into()),
        model_justifications: PerElement::default(),
        cot_reasoning: PerElement::default(),
        element_levels: PerElement::new(ComplexityLevel::Low, ComplexityLevel::Low, ComplexityLevel::Moderate),
        embedding: vec![1.0],
    }
}

#[tokio::test]
async fn three_exemplars_render_three_example_blocks() {
    let provider = Arc::new(Capture {
        reply: mdm_reply([ComplexityLevel::Low; 3], "x"),
        seen: Mutex::new(Vec::new()),
    });
    let client = LlmClient::with_builtin_templates(provider.clone());
    let record = reference_case();
    let exemplars: Vec<Exemplar> = ["a", "b", "c"].iter().map(|id| exemplar(id)).collect();
    let mut audit = AuditLog::new();
    let params = Default::default();
    client
        .classify_mdm_initial(&record.encounter, &exemplars, &params, 0, &mut audit)
        .await
        .unwrap();
    client
        .classify_mdm_initial(&record.encounter, &[], &params, 1, &mut audit)
        .await
        .unwrap();
    let seen = provider.seen.lock().unwrap();
    assert_eq!(seen[0].system.matches("### Example ").count(), 3);
    assert!(seen[0].system.contains("\"level\": \"Limited\""));
    assert_eq!(seen[1].system.matches("### Example ").count(), 0);
    assert!(seen[0].user.contains("Acute otitis externa"));
    assert!(seen[0].user.contains("specialty: Family Medicine"));
    assert_eq!(audit.len(), 2);
}
