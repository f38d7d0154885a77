mod support;

use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use emcoder_core::audit::{AuditLog, AuditStatus, Stage};
use emcoder_core::domain::{ComplexityLevel, Element, EncounterType, PerElement};
use emcoder_core::llm::{
    CompletionRequest, LlmClient, MockProvider, Provider, ProviderError, ProviderIdentity, Script, ScriptedReply,
};
use emcoder_core::pipeline::{justify_result, Pipeline, PipelineConfig, PipelineErrorKind};
use emcoder_core::rules::{combine_mdm, select_cpt_code, CodeSelectionError};
use serde_json::json;
use support::*;
use ComplexityLevel::*;

fn pipeline(config: PipelineConfig, script: Script) -> (Pipeline, Arc<MockProvider>) {
    let (client, mock) = client(script);
    (Pipeline::new(config, client).unwrap(), mock)
}

fn reference_script() -> Script {
    Script::from_json(REFERENCE_CASE_SCRIPT).unwrap()
}

/// Initial levels (Low, Moderate, Low) with confirming critics.
fn base_script() -> Script {
    Script::new()
        .with("mdm_initial", vec![ScriptedReply::text(mdm_reply([Low, Moderate, Low], "initial"))])
        .with("critic_problem", vec![ScriptedReply::text(confirm(Low, Element::Problem))])
        .with("critic_risk", vec![ScriptedReply::text(confirm(Low, Element::Risk))])
        .with(
            "critic_data",
            vec![ScriptedReply::text(
                json!({"revised_level": "Moderate", "per_instruction_reasoning": ["kept"],
                       "data_items": [{"kind": "TestOrdered", "description": "CBC"}, {"kind": "TestOrdered", "description": "BMP"}, {"kind": "TestResultReviewed", "description": "TSH"}]})
                .to_string(),
            )],
        )
        .with(
            "encounter_type",
            vec![ScriptedReply::text(encounter_type_reply(&EncounterType::OfficeOrOutpatient))],
        )
}

struct Recording {
    inner: MockProvider,
    requests: Mutex<Vec<CompletionRequest>>,
}

#[async_trait]
impl Provider for Recording {
    fn identity(&self) -> ProviderIdentity {
        self.inner.identity()
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        self.requests.lock().unwrap().push(request.clone());
        self.inner.complete(request).await
    }
}

#[tokio::test]
async fn reference_case_codes_99203() {
    let record = reference_case();
    let (p, mock) = pipeline(PipelineConfig::default(), reference_script());
    let result = p.code_encounter(&record.encounter, &empty_store()).await.unwrap();
    assert_eq!(result.cpt_code, "99203");
    assert_eq!(result.mdm_level, Low);
    assert_eq!(result.encounter_type, EncounterType::OfficeOrOutpatient);
    assert_eq!(result.final_elements.levels(), PerElement::new(Low, Straightforward, Low));
    assert_eq!(result.k(), 3);
    result.check_invariants().unwrap();
    // one record per provider call: 3 initial + 9 critic + 1 encounter type
    assert_eq!(mock.calls(), 13);
    assert_eq!(result.audit.iter().filter(|a| a.template.is_some()).count(), 13);

    let report = justify_result(&result);
    for needle in ["Problem: Low", "Data: Straightforward", "MDM: Low", "99203"] {
        assert!(report.contains(needle), "report lacks {needle}:\n{report}");
    }
    assert!(!report.contains("degraded"));
    assert_eq!(report, justify_result(&result.clone()));
}

#[tokio::test]
async fn scripted_runs_are_byte_identical() {
    let recs = records(DEV10);
    let mut store = empty_store();
    for r in &recs {
        store.index_annotated(&r.encounter, r.gold.as_ref().unwrap()).await.unwrap();
    }
    let (p, _) = pipeline(PipelineConfig::default(), gold_script(&recs));
    let mut runs = Vec::new();
    for _ in 0..2 {
        let mut out = String::new();
        for r in &recs {
            let result = p.code_encounter(&r.encounter, &store).await.unwrap();
            result.check_invariants().unwrap();
            assert_eq!(result.exemplar_ids.len(), 3);
            assert!(!result.exemplar_ids.contains(&r.encounter.id));
            assert_eq!(&result.cpt_code, &r.gold.as_ref().unwrap().cpt_code, "{}", r.encounter.id);
            out.push_str(&serde_json::to_string(&result).unwrap());
            out.push('\n');
        }
        runs.push(out);
    }
    assert_eq!(runs[0], runs[1]);
}

#[tokio::test]
async fn leave_one_out_can_be_disabled() {
    let recs = records(DEV10);
    let mut store = empty_store();
    for r in &recs {
        store.index_annotated(&r.encounter, r.gold.as_ref().unwrap()).await.unwrap();
    }
    let target = &recs[1].encounter;
    let config = PipelineConfig {
        leave_one_out: false,
        k_votes: 1,
        ..Default::default()
    };
    let (p, _) = pipeline(config, gold_script(&recs));
    let result = p.code_encounter(target, &store).await.unwrap();
    assert_eq!(result.exemplar_ids[0], target.id);
}

#[tokio::test]
async fn zero_rounds_returns_initial_assessment() {
    let record = reference_case();
    let config = PipelineConfig {
        rci_rounds: 0,
        k_votes: 1,
        ..Default::default()
    };
    let (p, mock) = pipeline(config, base_script());
    let mut log = AuditLog::new();
    let pass = p.run_single_pass(&record.encounter, &[], 0, &mut log).await.unwrap();
    let mut direct_log = AuditLog::new();
    let initial = p
        .client()
        .classify_mdm_initial(&record.encounter, &[], &p.config().params, 0, &mut direct_log)
        .await
        .unwrap();
    assert_eq!(pass, initial);
    assert_eq!(mock.calls(), 2);
    assert!(log.records().iter().all(|r| r.stage == Stage::MdmInitial || r.stage == Stage::Pass));
}

#[tokio::test]
async fn data_critic_revision_changes_only_data() {
    let record = reference_case();
    let script = base_script().with(
        "critic_data",
        vec![ScriptedReply::text(
            json!({"revised_level": "Limited", "per_instruction_reasoning": ["result review not documented"],
                   "justification": "two unique tests ordered",
                   "data_items": [{"kind": "TestOrdered", "description": "CBC"}, {"kind": "TestOrdered", "description": "BMP"}]})
            .to_string(),
        )],
    );
    let config = PipelineConfig {
        k_votes: 1,
        ..Default::default()
    };
    let (p, _) = pipeline(config, script);
    let mut log = AuditLog::new();
    let initial = p
        .client()
        .classify_mdm_initial(&record.encounter, &[], &p.config().params, 0, &mut log)
        .await
        .unwrap();
    let revised = p.run_single_pass(&record.encounter, &[], 0, &mut log).await.unwrap();
    assert_eq!(revised.levels(), PerElement::new(Low, Low, Low));
    assert_eq!(revised.data_items.len(), 2);
    assert_eq!(revised.element(Element::Data).justification, "two unique tests ordered");
    assert!(!revised.element(Element::Data).findings.iter().any(|f| f.contains("ConsistencyWarning")));
    for e in [Element::Problem, Element::Risk] {
        assert_eq!(revised.element(e).level, initial.element(e).level);
        assert_eq!(revised.element(e).justification, initial.element(e).justification);
    }
}

#[tokio::test]
async fn failed_risk_critic_keeps_initial_risk() {
    let record = reference_case();
    let script = base_script().with("critic_risk", vec![ScriptedReply::error("timeout")]);
    let config = PipelineConfig {
        k_votes: 1,
        ..Default::default()
    };
    let (p, _) = pipeline(config, script);
    let result = p.code_encounter(&record.encounter, &empty_store()).await.unwrap();
    assert_eq!(result.final_elements.level(Element::Risk), Low);
    assert_eq!(result.final_elements.element(Element::Risk).justification, "initial risk justification");
    let degraded: Vec<_> = result.audit.iter().filter(|a| a.is_degraded()).collect();
    assert_eq!(degraded.len(), 1);
    assert_eq!(degraded[0].stage, Stage::CriticRisk);
    assert_eq!(result.degraded_count(), 1);
    let failed_call = result
        .audit
        .iter()
        .find(|a| a.stage == Stage::CriticRisk && a.status == AuditStatus::Failed)
        .expect("the failed call is audited");
    assert!(failed_call.seq < degraded[0].seq);
    assert!(justify_result(&result).contains("Degraded stages (1)"));
}

#[tokio::test]
async fn unparseable_critic_reply_is_degraded_too() {
    let record = reference_case();
    let script = base_script().with("critic_problem", vec![ScriptedReply::text("I think it is Low.")]);
    let config = PipelineConfig {
        k_votes: 1,
        ..Default::default()
    };
    let (p, _) = pipeline(config, script);
    let result = p.code_encounter(&record.encounter, &empty_store()).await.unwrap();
    assert_eq!(result.final_elements.level(Element::Problem), Low);
    assert_eq!(result.degraded_count(), 1);
}

#[tokio::test]
async fn single_vote_equals_single_pass() {
    let record = reference_case();
    let config = PipelineConfig {
        k_votes: 1,
        ..Default::default()
    };
    let (p, _) = pipeline(config.clone(), base_script());
    let mut log = AuditLog::new();
    let pass = p.run_single_pass(&record.encounter, &[], 0, &mut log).await.unwrap();
    let result = p.code_encounter(&record.encounter, &empty_store()).await.unwrap();
    let levels = pass.levels();
    assert_eq!(result.final_elements.levels(), levels);
    assert_eq!(result.mdm_level, combine_mdm(levels.problem, levels.data, levels.risk));
    let code = select_cpt_code(
        &EncounterType::OfficeOrOutpatient,
        record.encounter.patient_type,
        result.mdm_level,
        record.encounter.age_years,
        &config.mapping,
    )
    .unwrap();
    assert_eq!(result.cpt_code, code);
    assert_eq!(result.final_elements, pass);
}

#[tokio::test]
async fn majority_of_passes_must_succeed() {
    let record = reference_case();
    let ok = ScriptedReply::text(mdm_reply([Low, Moderate, Low], "initial"));
    let down = ScriptedReply::error("connection reset");

    let one_ok = base_script().with("mdm_initial", vec![ok.clone(), down.clone(), down.clone()]);
    let (p, _) = pipeline(PipelineConfig::default(), one_ok);
    let err = p.code_encounter(&record.encounter, &empty_store()).await.unwrap_err();
    assert!(matches!(err.kind, PipelineErrorKind::PipelineFailure { succeeded: 1, required: 2, k: 3, .. }));
    assert!(err.is_provider_failure());
    assert!(err.audit.iter().any(|a| a.stage == Stage::Vote && a.status == AuditStatus::Failed));

    let two_ok = base_script().with("mdm_initial", vec![ok.clone(), down.clone(), ok.clone()]);
    let (p, _) = pipeline(PipelineConfig::default(), two_ok);
    let result = p.code_encounter(&record.encounter, &empty_store()).await.unwrap();
    assert_eq!(result.k(), 2);
    result.check_invariants().unwrap();
    assert!(result.audit.iter().any(|a| a.stage == Stage::Vote && a.is_degraded()));
}

#[tokio::test]
async fn justification_comes_from_first_agreeing_pass() {
    let record = reference_case();
    let script = base_script()
        .with(
            "mdm_initial",
            vec![
                ScriptedReply::text(mdm_reply([Moderate, Moderate, Low], "p0")),
                ScriptedReply::text(mdm_reply([Low, Moderate, Low], "p1")),
                ScriptedReply::text(mdm_reply([Low, Moderate, Low], "p2")),
            ],
        )
        .with("critic_problem", vec![ScriptedReply::text(r#"{"revised_level":"Bogus","per_instruction_reasoning":[]}"#)]);
    let (p, _) = pipeline(PipelineConfig::default(), script);
    let result = p.code_encounter(&record.encounter, &empty_store()).await.unwrap();
    assert_eq!(result.per_element_votes.problem, vec![Moderate, Low, Low]);
    assert_eq!(result.final_elements.level(Element::Problem), Low);
    assert_eq!(result.final_elements.element(Element::Problem).justification, "p1 problem justification");
    assert_eq!(result.final_elements.element(Element::Risk).justification, "p0 risk justification");
}

#[tokio::test]
async fn rounds_critique_previous_round_output() {
    let record = reference_case();
    let script = base_script().with(
        "critic_data",
        vec![
            ScriptedReply::text(
                json!({"revised_level": "Limited", "per_instruction_reasoning": ["r0"],
                       "data_items": [{"kind": "TestOrdered", "description": "CBC"}, {"kind": "TestOrdered", "description": "BMP"}]})
                .to_string(),
            ),
            ScriptedReply::text(
                json!({"revised_level": "Limited", "per_instruction_reasoning": ["r1"],
                       "data_items": [{"kind": "TestOrdered", "description": "CBC"}, {"kind": "TestOrdered", "description": "BMP"}]})
                .to_string(),
            ),
        ],
    );
    let recording = Arc::new(Recording {
        inner: MockProvider::scripted(script),
        requests: Mutex::new(Vec::new()),
    });
    let config = PipelineConfig {
        k_votes: 1,
        rci_rounds: 2,
        ..Default::default()
    };
    let p = Pipeline::new(config, LlmClient::with_builtin_templates(recording.clone())).unwrap();
    let mut log = AuditLog::new();
    let out = p.run_single_pass(&record.encounter, &[], 0, &mut log).await.unwrap();
    assert_eq!(out.element(Element::Data).findings, vec!["r0".to_string(), "r1".to_string()]);
    let requests = recording.requests.lock().unwrap();
    let data_calls: Vec<_> = requests.iter().filter(|r| r.context.template == "critic_data").collect();
    assert_eq!(data_calls.len(), 2);
    assert!(data_calls[0].prompt.user.contains("Data complexity: Moderate"));
    assert!(data_calls[1].prompt.user.contains("Data complexity: Limited"));
    assert_eq!(data_calls[1].context.prior_level, Some(Low));
}

#[tokio::test]
async fn passes_do_not_see_each_other() {
    let record = reference_case();
    let script = base_script().with(
        "mdm_initial",
        vec![
            ScriptedReply::text(mdm_reply([Low, Moderate, Low], "p0")),
            ScriptedReply::text(mdm_reply([High, Moderate, Low], "p1")),
            ScriptedReply::text(mdm_reply([Low, Moderate, Low], "p2")),
        ],
    );
    let recording = Arc::new(Recording {
        inner: MockProvider::scripted(script),
        requests: Mutex::new(Vec::new()),
    });
    let p = Pipeline::new(PipelineConfig::default(), LlmClient::with_builtin_templates(recording.clone())).unwrap();
    let result = p.code_encounter(&record.encounter, &empty_store()).await.unwrap();
    let requests = recording.requests.lock().unwrap();
    for r in requests.iter().filter(|r| r.context.template.starts_with("critic")) {
        let pass = r.context.pass.unwrap();
        for other in (0..3).filter(|o| *o != pass) {
            assert!(!r.prompt.user.contains(&format!("p{other} ")), "pass {pass} saw pass {other}");
        }
    }
    for a in result.audit.iter().filter(|a| a.pass.is_some()) {
        assert!(matches!(
            a.stage,
            Stage::MdmInitial | Stage::CriticProblem | Stage::CriticData | Stage::CriticRisk | Stage::Pass
        ));
    }
}

#[tokio::test]
async fn uncodeable_type_surfaces_with_audit() {
    let record = reference_case();
    let script = base_script().with(
        "encounter_type",
        vec![ScriptedReply::text(encounter_type_reply(&EncounterType::Other("Inpatient".into())))],
    );
    let (p, _) = pipeline(PipelineConfig::default(), script);
    let err = p.code_encounter(&record.encounter, &empty_store()).await.unwrap_err();
    assert_eq!(
        err.kind,
        PipelineErrorKind::CodeSelection(CodeSelectionError::UncodeableEncounterType("Inpatient".into()))
    );
    assert!(err.audit.iter().any(|a| a.stage == Stage::DecisionTree && a.status == AuditStatus::Failed));
}

#[tokio::test]
async fn preventive_visit_ignores_mdm() {
    let recs = records(DEV10);
    let well_child = recs.iter().find(|r| r.encounter.id == "enc-04").unwrap();
    let script = gold_script(&recs).with("enc-04/mdm_initial", vec![ScriptedReply::text(mdm_reply([High, High, High], "x"))]);
    let config = PipelineConfig {
        rci_rounds: 0,
        ..Default::default()
    };
    let (p, _) = pipeline(config, script);
    let result = p.code_encounter(&well_child.encounter, &empty_store()).await.unwrap();
    assert_eq!(result.mdm_level, High);
    assert_eq!(result.cpt_code, "99383");
}

#[tokio::test]
async fn zero_votes_rejected() {
    let (c, _) = client(base_script());
    let config = PipelineConfig {
        k_votes: 0,
        ..Default::default()
    };
    assert!(matches!(
        Pipeline::new(config, c).map(|_| ()).unwrap_err().kind,
        PipelineErrorKind::InvalidConfig(_)
    ));
}
