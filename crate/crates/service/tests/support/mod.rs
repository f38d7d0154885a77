#![allow(dead_code)]

pub mod oracles;

use std::path::PathBuf;
use std::sync::Arc;

use emcoder_client::EmcoderClient;
use emcoder_core::domain::{parse_record, DatasetRecord, Element, EncounterType};
use emcoder_core::llm::{LlmClient, MockProvider, Script, ScriptedReply};
use emcoder_core::pipeline::{Pipeline, PipelineConfig};
use emcoder_core::retrieval::{ExemplarStore, HashedBagOfWords};
use emcoder_service::{AppState, ServiceOptions};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

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

pub fn without_gold(mut records: Vec<DatasetRecord>) -> Vec<DatasetRecord> {
    for r in &mut records {
        r.gold = None;
    }
    records
}

/// The reference-case script as the fallback, plus per-id replies that
/// reproduce each dev record's gold levels.
pub fn script() -> Script {
    let mut script = Script::from_json(REFERENCE_CASE_SCRIPT).unwrap();
    for r in records(DEV10) {
        let g = r.gold.as_ref().unwrap();
        let id = &r.encounter.id;
        let mut mdm = serde_json::Map::new();
        for e in Element::ALL {
            let l = *g.levels().get(e);
            mdm.insert(
                e.as_str().into(),
                json!({"level": l.display_name(e), "justification": format!("{id} {}", e.as_str())}),
            );
            let mut confirm = json!({"revised_level": l.display_name(e), "per_instruction_reasoning": ["ok"]});
            if e == Element::Data {
                confirm["data_items"] = json!([]);
            }
            script.set(format!("{id}/critic_{}", e.as_str()), vec![ScriptedReply::text(confirm.to_string())]);
        }
        script.set(format!("{id}/mdm_initial"), vec![ScriptedReply::text(serde_json::Value::Object(mdm).to_string())]);
        let t = g.encounter_type.clone().unwrap_or(EncounterType::OfficeOrOutpatient);
        script.set(
            format!("{id}/encounter_type"),
            vec![ScriptedReply::text(json!({"encounter_type": t.label(), "explanation": "x"}).to_string())],
        );
    }
    script
}

pub fn pipeline(script: Script) -> Pipeline {
    let mock = Arc::new(MockProvider::scripted(script));
    Pipeline::new(PipelineConfig::default(), LlmClient::with_builtin_templates(mock)).unwrap()
}

pub fn empty_store() -> ExemplarStore {
    ExemplarStore::new(Arc::new(HashedBagOfWords::default()))
}

pub struct Running {
    pub client: EmcoderClient,
    pub base: String,
    pub state: AppState,
    stop: Option<oneshot::Sender<()>>,
    handle: Option<tokio::task::JoinHandle<()>>,
}

impl Running {
    /// Stop the server and wait for it to exit.
    pub async fn shutdown(mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(handle) = self.handle.take() {
            handle.await.unwrap();
        }
    }
}

pub async fn start_with(script: Script, records: Vec<DatasetRecord>, data_dir: Option<PathBuf>) -> Running {
    let state = AppState::open(ServiceOptions {
        pipeline: pipeline(script),
        store: empty_store(),
        records,
        data_dir,
    })
    .await
    .unwrap();
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let (stop, stopped) = oneshot::channel::<()>();
    let serve_state = state.clone();
    let handle = tokio::spawn(async move {
        emcoder_service::serve(listener, serve_state, async {
            let _ = stopped.await;
        })
        .await
        .unwrap();
    });
    Running {
        client: EmcoderClient::new(base.clone()),
        base,
        state,
        stop: Some(stop),
        handle: Some(handle),
    }
}

/// reference case plus the ten dev encounters, gold blocks stripped.
pub async fn start(data_dir: Option<PathBuf>) -> Running {
    let mut all = vec![reference_case()];
    all.extend(records(DEV10));
    start_with(script(), without_gold(all), data_dir).await
}
