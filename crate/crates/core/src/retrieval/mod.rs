//! Exemplar store for dynamic few-shot prompting.
//!
//! Annotated encounters are indexed with an embedding of their note and
//! retrieved by exact cosine similarity. The store is small (hundreds of
//! records), so every query is a full scan.

mod embed;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ComplexityLevel, Element, Encounter, GoldAnnotation, PerElement};

pub use embed::{check_vector, tokenize, EmbedError, Embedder, HashedBagOfWords, HttpEmbedder};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("embedding has {got} dimensions, store expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("exemplar {id}: missing gold justification for {element}")]
    MissingJustification { id: String, element: Element },
    #[error("store file line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("store was built with embedder `{stored}`, got `{given}`")]
    EmbedderMismatch { stored: String, given: String },
    #[error("store io: {0}")]
    Io(#[from] std::io::Error),
}

/// An annotated encounter available as a few-shot example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    /// Equals the source encounter id.
    pub id: String,
    pub soap_text: String,
    pub gold_justifications: PerElement<String>,
    #[serde(default)]
    pub model_justifications: PerElement<String>,
    #[serde(default)]
    pub cot_reasoning: PerElement<String>,
    pub element_levels: PerElement<ComplexityLevel>,
    pub embedding: Vec<f32>,
}

impl Exemplar {
    /// Build an exemplar from an encounter and its gold annotation. Gold
    /// justifications are required for every element.
    pub fn from_annotation(
        encounter: &Encounter,
        gold: &GoldAnnotation,
        embedding: Vec<f32>,
    ) -> Result<Self, RetrievalError> {
        let just = gold.justifications();
        for (element, text) in just.iter() {
            if text.trim().is_empty() {
                return Err(RetrievalError::MissingJustification {
                    id: encounter.id.clone(),
                    element,
                });
            }
        }
        Ok(Self {
            id: encounter.id.clone(),
            soap_text: encounter.soap.raw().to_string(),
            gold_justifications: just.map(|_, s| s.to_string()),
            model_justifications: gold.model_justifications.clone().unwrap_or_default(),
            cot_reasoning: gold.cot.clone().unwrap_or_default(),
            element_levels: gold.levels(),
            embedding,
        })
    }
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredExemplar<'a> {
    pub exemplar: &'a Exemplar,
    pub similarity: f64,
}

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    dimension: usize,
    embedder: String,
    count: usize,
}

/// Exemplars keyed by id, with the embedder used to build and query them.
///
/// Indexing takes `&mut self` and queries take `&self`; share behind a
/// read-write lock for one writer and many readers.
#[derive(Clone)]
pub struct ExemplarStore {
    embedder: Arc<dyn Embedder>,
    entries: BTreeMap<String, Exemplar>,
}

impl std::fmt::Debug for ExemplarStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExemplarStore")
            .field("embedder", &self.embedder.name())
            .field("dimension", &self.dimension())
            .field("len", &self.entries.len())
            .finish()
    }
}

impl ExemplarStore {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Self {
            embedder,
            entries: BTreeMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.embedder.dimension()
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Exemplar> {
        self.entries.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Insert or replace an exemplar by id.
    pub fn index_exemplar(&mut self, exemplar: Exemplar) -> Result<(), RetrievalError> {
        if exemplar.embedding.len() != self.dimension() {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dimension(),
                got: exemplar.embedding.len(),
            });
        }
        if exemplar.embedding.iter().any(|v| !v.is_finite()) {
            return Err(RetrievalError::NonFinite);
        }
        self.entries.insert(exemplar.id.clone(), exemplar);
        Ok(())
    }

    /// Embed the encounter note and index it with its gold annotation.
    pub async fn index_annotated(&mut self, encounter: &Encounter, gold: &GoldAnnotation) -> Result<(), RetrievalError> {
        let embedding = self.embedder.embed(encounter.soap.raw()).await?;
        check_vector(&embedding, self.dimension())?;
        self.index_exemplar(Exemplar::from_annotation(encounter, gold, embedding)?)
    }

    /// Up to `n` exemplars by descending cosine similarity to `query`, after
    /// removing `exclude_id`. Equal similarities order by ascending id.
    pub fn query_by_vector(&self, query: &[f32], n: usize, exclude_id: Option<&str>) -> Vec<ScoredExemplar<'_>> {
        let mut scored: Vec<ScoredExemplar<'_>> = self
            .entries
            .values()
            .filter(|e| Some(e.id.as_str()) != exclude_id)
            .map(|e| ScoredExemplar {
                exemplar: e,
                similarity: cosine_similarity(query, &e.embedding),
            })
            .collect();
        scored.sort_by(|a, b| {
            b.similarity
                .partial_cmp(&a.similarity)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.exemplar.id.cmp(&b.exemplar.id))
        });
        scored.truncate(n);
        scored
    }

    pub async fn query_top_n(
        &self,
        query_text: &str,
        n: usize,
        exclude_id: Option<&str>,
    ) -> Result<Vec<Exemplar>, RetrievalError> {
        if n == 0 || self.entries.is_empty() {
            return Ok(Vec::new());
        }
        let query = self.embedder.embed(query_text).await?;
        check_vector(&query, self.dimension())?;
        Ok(self
            .query_by_vector(&query, n, exclude_id)
            .into_iter()
            .map(|s| s.exemplar.clone())
            .collect())
    }

    /// Header line then one exemplar per line, ordered by id.
    pub fn write_to(&self, mut out: impl Write) -> Result<(), RetrievalError> {
        let header = StoreHeader {
            dimension: self.dimension(),
            embedder: self.embedder.name().to_string(),
            count: self.entries.len(),
        };
        serde_json::to_writer(&mut out, &header).map_err(std::io::Error::other)?;
        out.write_all(b"\n")?;
        for exemplar in self.entries.values() {
            serde_json::to_writer(&mut out, exemplar).map_err(std::io::Error::other)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_from(input: impl BufRead, embedder: Arc<dyn Embedder>) -> Result<Self, RetrievalError> {
        let mut lines = input.lines();
        let first = lines.next().ok_or_else(|| RetrievalError::Format {
            line: 1,
            reason: "missing header record".into(),
        })??;
        let header: StoreHeader = serde_json::from_str(&first).map_err(|e| RetrievalError::Format {
            line: 1,
            reason: format!("bad header: {e}"),
        })?;
        if header.embedder != embedder.name() {
            return Err(RetrievalError::EmbedderMismatch {
                stored: header.embedder,
                given: embedder.name().to_string(),
            });
        }
        if header.dimension != embedder.dimension() {
            return Err(RetrievalError::DimensionMismatch {
                expected: embedder.dimension(),
                got: header.dimension,
            });
        }
        let mut store = ExemplarStore::new(embedder);
        for (idx, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let exemplar: Exemplar = serde_json::from_str(&line).map_err(|e| RetrievalError::Format {
                line: idx + 2,
                reason: e.to_string(),
            })?;
            store.index_exemplar(exemplar)?;
        }
        if store.len() != header.count {
            return Err(RetrievalError::Format {
                line: 1,
                reason: format!("header declares {} exemplars, found {}", header.count, store.len()),
            });
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path, embedder: Arc<dyn Embedder>) -> Result<Self, RetrievalError> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file), embedder)
    }
}
