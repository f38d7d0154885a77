//! HTTP service: coding, encounter browsing, annotation and live metrics.
//!
//! Results and annotations are kept in memory and mirrored to append-only
//! JSONL journals under the data directory, replayed on startup.

pub mod error;
pub mod journal;

use std::collections::BTreeMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{BytesRejection, PathRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Extension, Json, Router};
use emcoder_client::api::{
    codes, status_of, AnnotationAck, EncounterDetail, EncounterPage, EncounterStatus, EncounterSummary, MetricsSummary,
};
use emcoder_core::domain::{parse_record, render_record, CodingResult, DatasetRecord, GoldAnnotation, SplitTag};
use emcoder_core::eval::score_run;
use emcoder_core::pipeline::Pipeline;
use emcoder_core::retrieval::ExemplarStore;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::RwLock;

use error::{ApiError, RequestId};
use journal::{Journal, JournalError};

pub const RESULTS_JOURNAL: &str = "results.jsonl";
pub const ANNOTATIONS_JOURNAL: &str = "annotations.jsonl";
pub const DEFAULT_PAGE_LIMIT: usize = 50;
pub const MAX_PAGE_LIMIT: usize = 500;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("duplicate encounter id `{0}` in the dataset")]
    DuplicateId(String),
    #[error("journal entry for `{id}`: {reason}")]
    Replay { id: String, reason: String },
}

pub struct ServiceOptions {
    pub pipeline: Pipeline,
    pub store: ExemplarStore,
    pub records: Vec<DatasetRecord>,
    /// Journal directory; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct ResultEntry {
    record: serde_json::Value,
    result: CodingResult,
}

#[derive(Serialize, Deserialize)]
struct AnnotationEntry {
    id: String,
    gold: GoldAnnotation,
}

#[derive(Default)]
struct Catalog {
    records: BTreeMap<String, DatasetRecord>,
    results: BTreeMap<String, CodingResult>,
}

impl Catalog {
    fn summary(&self, record: &DatasetRecord) -> EncounterSummary {
        let e = &record.encounter;
        let result = self.results.get(&e.id);
        EncounterSummary {
            id: e.id.clone(),
            age_years: e.age_years,
            patient_type: e.patient_type,
            specialty: e.specialty.clone(),
            split: record.split,
            status: status_of(record.gold.is_some(), result.is_some()),
            predicted_cpt: result.map(|r| r.cpt_code.clone()),
            gold_cpt: record.gold.as_ref().map(|g| g.cpt_code.clone()),
            degraded_stages: result.map_or(0, CodingResult::degraded_count),
        }
    }
}

struct Inner {
    pipeline: Pipeline,
    // replaced wholesale on annotation so coding requests hold a snapshot
    store: RwLock<Arc<ExemplarStore>>,
    catalog: RwLock<Catalog>,
    results_journal: Journal,
    annotations_journal: Journal,
    next_request: AtomicU64,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

fn indexable(gold: &GoldAnnotation) -> bool {
    gold.justifications().iter().all(|(_, j)| !j.trim().is_empty())
}

impl AppState {
    /// Build the state and replay any journals found in the data directory.
    pub async fn open(options: ServiceOptions) -> Result<Self, ServiceError> {
        let mut catalog = Catalog::default();
        for record in options.records {
            let id = record.encounter.id.clone();
            if catalog.records.insert(id.clone(), record).is_some() {
                return Err(ServiceError::DuplicateId(id));
            }
        }
        let mut store = options.store;
        let (results_journal, annotations_journal) = match &options.data_dir {
            None => (Journal::memory(), Journal::memory()),
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|source| JournalError::Io {
                    path: dir.clone(),
                    source,
                })?;
                let (results, result_entries) = Journal::open::<ResultEntry>(&dir.join(RESULTS_JOURNAL))?;
                for entry in result_entries {
                    let id = entry.result.encounter_id.clone();
                    let mut record = parse_record(&entry.record.to_string()).map_err(|e| ServiceError::Replay {
                        id: id.clone(),
                        reason: e.to_string(),
                    })?;
                    if let Some(existing) = catalog.records.get(&id) {
                        record.gold = record.gold.or_else(|| existing.gold.clone());
                        record.split = record.split.or(existing.split);
                    }
                    catalog.records.insert(id.clone(), record);
                    catalog.results.insert(id, entry.result);
                }
                let (annotations, annotation_entries) =
                    Journal::open::<AnnotationEntry>(&dir.join(ANNOTATIONS_JOURNAL))?;
                for entry in annotation_entries {
                    let Some(record) = catalog.records.get_mut(&entry.id) else {
                        return Err(ServiceError::Replay {
                            id: entry.id,
                            reason: "annotation for an unknown encounter".into(),
                        });
                    };
                    if indexable(&entry.gold) {
                        store
                            .index_annotated(&record.encounter, &entry.gold)
                            .await
                            .map_err(|e| ServiceError::Replay {
                                id: entry.id.clone(),
                                reason: e.to_string(),
                            })?;
                    }
                    record.gold = Some(entry.gold);
                }
                (results, annotations)
            }
        };
        Ok(Self(Arc::new(Inner {
            pipeline: options.pipeline,
            store: RwLock::new(Arc::new(store)),
            catalog: RwLock::new(catalog),
            results_journal,
            annotations_journal,
            next_request: AtomicU64::new(0),
        })))
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.0.pipeline
    }

    pub async fn store(&self) -> Arc<ExemplarStore> {
        self.0.store.read().await.clone()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/code", post(code))
        .route("/v1/encounters", get(list_encounters))
        .route("/v1/encounters/{id}", get(get_encounter))
        .route("/v1/encounters/{id}/annotation", post(annotate))
        .route("/v1/results/{id}", get(get_result))
        .route("/v1/metrics", get(metrics))
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(middleware::from_fn_with_state(state.clone(), assign_request_id))
        .with_state(state)
}

/// Serve until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn assign_request_id(State(state): State<AppState>, mut request: Request, next: Next) -> Response {
    let n = state.0.next_request.fetch_add(1, Ordering::Relaxed) + 1;
    let rid = RequestId(format!("req-{n:08}"));
    let header = HeaderValue::from_str(&rid.0).expect("request ids are ascii");
    request.extensions_mut().insert(rid);
    let mut response = next.run(request).await;
    response.headers_mut().insert("x-request-id", header);
    response
}

async fn not_found(Extension(rid): Extension<RequestId>) -> ApiError {
    ApiError::not_found("no such route", &rid)
}

async fn method_not_allowed(Extension(rid): Extension<RequestId>) -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, codes::METHOD_NOT_ALLOWED, "method not allowed", &rid)
}

fn body_text(body: Result<Bytes, BytesRejection>, rid: &RequestId) -> Result<String, ApiError> {
    let bytes = body.map_err(|e| ApiError::bad_request(e.body_text(), rid))?;
    String::from_utf8(bytes.to_vec()).map_err(|_| ApiError::bad_request("body is not UTF-8", rid))
}

fn path_id(path: Result<Path<String>, PathRejection>, rid: &RequestId) -> Result<String, ApiError> {
    path.map(|Path(id)| id).map_err(|e| ApiError::bad_request(e.body_text(), rid))
}

async fn code(
    State(state): State<AppState>,
    Extension(rid): Extension<RequestId>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<CodingResult>, ApiError> {
    let text = body_text(body, &rid)?;
    let mut record = parse_record(&text).map_err(|e| ApiError::bad_request(e.to_string(), &rid))?;
    let store = state.store().await;
    let result = state
        .0
        .pipeline
        .code_encounter(&record.encounter, &store)
        .await
        .map_err(|e| ApiError::from_pipeline(e, &rid))?;
    let id = record.encounter.id.clone();
    let mut writer = state.0.results_journal.writer().await;
    let mut catalog = state.0.catalog.write().await;
    if let Some(existing) = catalog.records.get(&id) {
        record.gold = record.gold.take().or_else(|| existing.gold.clone());
        record.split = record.split.or(existing.split);
    }
    let entry = ResultEntry {
        record: serde_json::from_str(&render_record(&record)).expect("rendered records are JSON"),
        result,
    };
    writer.append(&entry).map_err(|e| ApiError::internal(e, &rid))?;
    catalog.records.insert(id.clone(), record);
    catalog.results.insert(id, entry.result.clone());
    Ok(Json(entry.result))
}

#[derive(Deserialize)]
struct ListParams {
    split: Option<String>,
    specialty: Option<String>,
    status: Option<String>,
    offset: Option<usize>,
    limit: Option<usize>,
}

async fn list_encounters(
    State(state): State<AppState>,
    Extension(rid): Extension<RequestId>,
    params: Result<Query<ListParams>, QueryRejection>,
) -> Result<Json<EncounterPage>, ApiError> {
    let Query(params) = params.map_err(|e| ApiError::bad_request(e.body_text(), &rid))?;
    let split = match params.split.as_deref() {
        None => None,
        Some(s) => Some(SplitTag::parse(s).ok_or_else(|| ApiError::bad_request(format!("unknown split `{s}`"), &rid))?),
    };
    let status = match params.status.as_deref() {
        None => None,
        Some(s) => Some(
            EncounterStatus::parse(s).ok_or_else(|| ApiError::bad_request(format!("unknown status `{s}`"), &rid))?,
        ),
    };
    let limit = params.limit.unwrap_or(DEFAULT_PAGE_LIMIT);
    if limit == 0 || limit > MAX_PAGE_LIMIT {
        return Err(ApiError::bad_request(format!("limit must be within 1..={MAX_PAGE_LIMIT}"), &rid));
    }
    let offset = params.offset.unwrap_or(0);
    let catalog = state.0.catalog.read().await;
    let matching: Vec<EncounterSummary> = catalog
        .records
        .values()
        .filter(|r| split.is_none() || r.split == split)
        .filter(|r| match &params.specialty {
            None => true,
            Some(want) => r.encounter.specialty.as_deref().is_some_and(|s| s.eq_ignore_ascii_case(want)),
        })
        .map(|r| catalog.summary(r))
        .filter(|s| status.is_none_or(|want| s.status == want))
        .collect();
    let total = matching.len();
    let items = matching.into_iter().skip(offset).take(limit).collect();
    Ok(Json(EncounterPage {
        items,
        total,
        offset,
        limit,
    }))
}

async fn get_encounter(
    State(state): State<AppState>,
    Extension(rid): Extension<RequestId>,
    path: Result<Path<String>, PathRejection>,
) -> Result<Json<EncounterDetail>, ApiError> {
    let id = path_id(path, &rid)?;
    let catalog = state.0.catalog.read().await;
    let record = catalog
        .records
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown encounter `{id}`"), &rid))?;
    Ok(Json(EncounterDetail::from_record(record, catalog.results.get(&id).cloned())))
}

async fn get_result(
    State(state): State<AppState>,
    Extension(rid): Extension<RequestId>,
    path: Result<Path<String>, PathRejection>,
) -> Result<Json<CodingResult>, ApiError> {
    let id = path_id(path, &rid)?;
    let catalog = state.0.catalog.read().await;
    catalog
        .results
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no result for `{id}`"), &rid))
}

async fn annotate(
    State(state): State<AppState>,
    Extension(rid): Extension<RequestId>,
    path: Result<Path<String>, PathRejection>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<AnnotationAck>, ApiError> {
    let id = path_id(path, &rid)?;
    let text = body_text(body, &rid)?;
    let mut gold: GoldAnnotation =
        serde_json::from_str(&text).map_err(|e| ApiError::bad_request(format!("annotation: {e}"), &rid))?;
    if gold.encounter_id.is_empty() {
        gold.encounter_id = id.clone();
    } else if gold.encounter_id != id {
        return Err(ApiError::bad_request("encounter_id does not match the path", &rid));
    }
    gold.validate().map_err(|e| ApiError::bad_request(e.to_string(), &rid))?;

    let mut writer = state.0.annotations_journal.writer().await;
    let encounter = {
        let catalog = state.0.catalog.read().await;
        catalog
            .records
            .get(&id)
            .map(|r| r.encounter.clone())
            .ok_or_else(|| ApiError::not_found(format!("unknown encounter `{id}`"), &rid))?
    };
    // embed before journaling so a failed embedding leaves no trace
    let indexed = if indexable(&gold) {
        let mut next = (*state.store().await).clone();
        next.index_annotated(&encounter, &gold).await.map_err(|e| ApiError::internal(e, &rid))?;
        Some(next)
    } else {
        None
    };
    writer
        .append(&AnnotationEntry {
            id: id.clone(),
            gold: gold.clone(),
        })
        .map_err(|e| ApiError::internal(e, &rid))?;
    if let Some(record) = state.0.catalog.write().await.records.get_mut(&id) {
        record.gold = Some(gold.clone());
    }
    let was_indexed = indexed.is_some();
    if let Some(next) = indexed {
        *state.0.store.write().await = Arc::new(next);
    }
    Ok(Json(AnnotationAck {
        id,
        gold,
        indexed: was_indexed,
    }))
}

async fn metrics(State(state): State<AppState>, Extension(rid): Extension<RequestId>) -> Result<Response, ApiError> {
    let catalog = state.0.catalog.read().await;
    let mut results = Vec::new();
    let mut golds = Vec::new();
    for (id, result) in &catalog.results {
        if let Some(gold) = catalog.records.get(id).and_then(|r| r.gold.clone()) {
            results.push(result.clone());
            golds.push(gold);
        }
    }
    let scored = results.len();
    let metrics = if scored == 0 {
        None
    } else {
        Some(score_run("live", &results, &golds).map_err(|e| ApiError::internal(e, &rid))?)
    };
    let summary = MetricsSummary {
        encounters: catalog.records.len(),
        coded: catalog.results.len(),
        annotated: catalog.records.values().filter(|r| r.gold.is_some()).count(),
        scored,
        degraded_stages: catalog.results.values().map(CodingResult::degraded_count).sum(),
        metrics,
    };
    Ok(Json(summary).into_response())
}
