use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding request failed: {0}")]
    Transport(String),
    #[error("embedding response malformed: {0}")]
    Malformed(String),
    #[error("embedder returned {got} dimensions, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("embedder returned a non-finite value")]
    NonFinite,
}

/// Text to fixed-length vector. Implementations must be deterministic and
/// return finite values of length [`dimension`](Embedder::dimension).
#[async_trait]
pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    async fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError>;
}

/// Checks length and finiteness of an embedder's output.
pub fn check_vector(vector: &[f32], dimension: usize) -> Result<(), EmbedError> {
    if vector.len() != dimension {
        return Err(EmbedError::Dimension {
            expected: dimension,
            got: vector.len(),
        });
    }
    if vector.iter().any(|v| !v.is_finite()) {
        return Err(EmbedError::NonFinite);
    }
    Ok(())
}

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, b| (h ^ *b as u64).wrapping_mul(FNV_PRIME))
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Hashed bag-of-words term counts. Stable across processes and platforms.
#[derive(Debug, Clone)]
pub struct HashedBagOfWords {
    dimension: usize,
    name: String,
}

impl HashedBagOfWords {
    pub const DEFAULT_DIMENSION: usize = 256;

    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self {
            dimension,
            name: format!("hashed-bow-{dimension}"),
        }
    }

    pub fn embed_sync(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0.0f32; self.dimension];
        for token in tokenize(text) {
            let slot = (fnv1a(token.as_bytes()) % self.dimension as u64) as usize;
            v[slot] += 1.0;
        }
        v
    }
}

impl Default for HashedBagOfWords {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIMENSION)
    }
}

#[async_trait]
impl Embedder for HashedBagOfWords {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    async fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        Ok(self.embed_sync(text))
    }
}

/// Client for an OpenAI-style `/embeddings` endpoint
/// (`{"model", "input"}` in, `{"data": [{"embedding": [...]}]}` out).
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    client: reqwest::Client,
    url: String,
    api_key: Option<String>,
    model: String,
    dimension: usize,
    name: String,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, api_key: Option<String>, model: impl Into<String>, dimension: usize) -> Self {
        let model = model.into();
        Self {
            client: reqwest::Client::new(),
            url: url.into(),
            api_key,
            name: format!("http:{model}"),
            model,
            dimension,
        }
    }
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

#[async_trait]
impl Embedder for HttpEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    async fn embed(&self, text: &str) -> Result<Vec<f32>, EmbedError> {
        let mut req = self
            .client
            .post(&self.url)
            .json(&json!({ "model": self.model, "input": text }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| EmbedError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(EmbedError::Transport(format!("HTTP {status}")));
        }
        let body: EmbeddingResponse = resp.json().await.map_err(|e| EmbedError::Malformed(e.to_string()))?;
        let vector = body
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| EmbedError::Malformed("empty data array".into()))?;
        check_vector(&vector, self.dimension)?;
        Ok(vector)
    }
}
