#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use emcoder_core::domain::{parse_record, ComplexityLevel, DatasetRecord, Element, EncounterType, GoldAnnotation};
use emcoder_core::llm::{LlmClient, MockProvider, Script, ScriptedReply};
use emcoder_core::retrieval::{ExemplarStore, HashedBagOfWords};
use serde_json::json;

pub const REFERENCE_CASE: &str = include_str!("../../../../fixtures/reference_case.jsonl");
pub const REFERENCE_CASE_SCRIPT: &str = include_str!("../../../../fixtures/reference_case_script.json");
pub const DEV10: &str = include_str!("../../../../fixtures/dev10.jsonl");

pub fn records(text: &str) -> Vec<DatasetRecord> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_record(l).expect("fixture parses"))
        .collect()
}

pub fn reference_case() -> DatasetRecord {
    records(REFERENCE_CASE).remove(0)
}

pub fn client(script: Script) -> (LlmClient, Arc<MockProvider>) {
    let mock = Arc::new(MockProvider::scripted(script));
    (LlmClient::with_builtin_templates(mock.clone()), mock)
}

pub fn empty_store() -> ExemplarStore {
    ExemplarStore::new(Arc::new(HashedBagOfWords::default()))
}

pub fn mdm_reply(levels: [ComplexityLevel; 3], tag: &str) -> String {
    let mut out = serde_json::Map::new();
    for (e, l) in Element::ALL.iter().zip(levels) {
        out.insert(
            e.as_str().into(),
            json!({"level": l.display_name(*e), "justification": format!("{tag} {} justification", e.as_str()), "cot": format!("{tag} {} reasoning", e.as_str())}),
        );
    }
    serde_json::Value::Object(out).to_string()
}

pub fn confirm(level: ComplexityLevel, element: Element) -> String {
    let mut reply = json!({
        "revised_level": level.display_name(element),
        "per_instruction_reasoning": [format!("{} confirmed", element.as_str())],
    });
    if element == Element::Data {
        reply["data_items"] = json!([]);
    }
    reply.to_string()
}

pub fn encounter_type_reply(t: &EncounterType) -> String {
    json!({"encounter_type": t.label(), "explanation": "fixture"}).to_string()
}

/// Script that reproduces each record's gold levels on every pass, with
/// confirming critics.
pub fn gold_script(records: &[DatasetRecord]) -> Script {
    let mut script = Script::new();
    for r in records {
        let g = r.gold.as_ref().expect("annotated");
        let id = &r.encounter.id;
        let levels = [g.problem, g.data, g.risk];
        script.set(format!("{id}/mdm_initial"), vec![ScriptedReply::text(mdm_reply(levels, id))]);
        for (e, l) in Element::ALL.iter().zip(levels) {
            script.set(
                format!("{id}/critic_{}", e.as_str()),
                vec![ScriptedReply::text(confirm(l, *e))],
            );
        }
        let t = g.encounter_type.clone().unwrap_or(EncounterType::OfficeOrOutpatient);
        script.set(format!("{id}/encounter_type"), vec![ScriptedReply::text(encounter_type_reply(&t))]);
    }
    script
}

pub fn golds(records: &[DatasetRecord]) -> Vec<GoldAnnotation> {
    records.iter().map(|r| r.gold.clone().expect("annotated")).collect()
}

/// Brute-force cosine ranking: every stored vector scored, sorted by
/// similarity descending then id ascending.
pub fn brute_force_top(store: &BTreeMap<String, Vec<f32>>, query: &[f32], n: usize, exclude: Option<&str>) -> Vec<String> {
    let mut scored: Vec<(f64, String)> = store
        .iter()
        .filter(|(id, _)| Some(id.as_str()) != exclude)
        .map(|(id, v)| {
            let dot: f64 = v.iter().zip(query).map(|(a, b)| *a as f64 * *b as f64).sum();
            let na: f64 = v.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
            let nb: f64 = query.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
            let sim = if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) };
            (sim, id.clone())
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    scored.into_iter().take(n).map(|(_, id)| id).collect()
}
