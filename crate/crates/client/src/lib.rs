//! Thin async client for the emcoder HTTP service.

pub mod api;

use emcoder_core::domain::{render_record, CodingResult, DatasetRecord, GoldAnnotation};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use thiserror::Error;

use api::{AnnotationAck, EncounterDetail, EncounterFilter, EncounterPage, ErrorBody, MetricsSummary};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    /// The service answered with an error body.
    #[error("{status} {}: {}", .body.error_code, .body.message)]
    Api { status: u16, body: ErrorBody },
    #[error("unexpected {status} response: {body}")]
    Unexpected { status: u16, body: String },
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } | ClientError::Unexpected { status, .. } => Some(*status),
            ClientError::Transport(e) => e.status().map(|s| s.as_u16()),
        }
    }

    pub fn error_body(&self) -> Option<&ErrorBody> {
        match self {
            ClientError::Api { body, .. } => Some(body),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EmcoderClient {
    base: String,
    http: reqwest::Client,
}

impl EmcoderClient {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        Self::with_http(base, reqwest::Client::new())
    }

    pub fn with_http(base: impl Into<String>, http: reqwest::Client) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        Self { base, http }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    /// Code one dataset record.
    pub async fn code(&self, record: &DatasetRecord) -> Result<CodingResult, ClientError> {
        self.code_raw(render_record(record)).await
    }

    /// Code a raw JSON record body, passed through unvalidated.
    pub async fn code_raw(&self, body: impl Into<String>) -> Result<CodingResult, ClientError> {
        let response = self
            .http
            .post(self.url("/v1/code"))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.into())
            .send()
            .await?;
        decode(response).await
    }

    pub async fn list_encounters(&self, filter: &EncounterFilter) -> Result<EncounterPage, ClientError> {
        let response = self.http.get(self.url("/v1/encounters")).query(filter).send().await?;
        decode(response).await
    }

    pub async fn encounter(&self, id: &str) -> Result<EncounterDetail, ClientError> {
        let response = self.http.get(self.url(&format!("/v1/encounters/{}", escape(id)))).send().await?;
        decode(response).await
    }

    pub async fn result(&self, id: &str) -> Result<CodingResult, ClientError> {
        let response = self.http.get(self.url(&format!("/v1/results/{}", escape(id)))).send().await?;
        decode(response).await
    }

    pub async fn annotate(&self, id: &str, gold: &GoldAnnotation) -> Result<AnnotationAck, ClientError> {
        let response = self
            .http
            .post(self.url(&format!("/v1/encounters/{}/annotation", escape(id))))
            .json(gold)
            .send()
            .await?;
        decode(response).await
    }

    pub async fn metrics(&self) -> Result<MetricsSummary, ClientError> {
        let response = self.http.get(self.url("/v1/metrics")).send().await?;
        decode(response).await
    }
}

/// Percent-encode a path segment.
fn escape(segment: &str) -> String {
    let mut out = String::with_capacity(segment.len());
    for b in segment.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'.' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

async fn decode<T: DeserializeOwned>(response: reqwest::Response) -> Result<T, ClientError> {
    let status = response.status();
    let text = response.text().await?;
    if status == StatusCode::OK {
        return serde_json::from_str(&text).map_err(|e| ClientError::Unexpected {
            status: status.as_u16(),
            body: format!("{e}: {text}"),
        });
    }
    match serde_json::from_str::<ErrorBody>(&text) {
        Ok(body) => Err(ClientError::Api {
            status: status.as_u16(),
            body,
        }),
        Err(_) => Err(ClientError::Unexpected {
            status: status.as_u16(),
            body: text,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_path_segments() {
        assert_eq!(escape("enc-01"), "enc-01");
        assert_eq!(escape("a b/c"), "a%20b%2Fc");
    }

    #[test]
    fn trailing_slash_is_trimmed() {
        assert_eq!(EmcoderClient::new("http://h:1/").url("/v1/metrics"), "http://h:1/v1/metrics");
    }
}
