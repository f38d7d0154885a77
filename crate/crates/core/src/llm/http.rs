use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;

use super::{CompletionRequest, Provider, ProviderError, ProviderIdentity};

pub const ENV_PROVIDER_URL: &str = "EMCODER_PROVIDER_URL";
pub const ENV_PROVIDER_KEY: &str = "EMCODER_PROVIDER_KEY";
pub const ENV_MODEL: &str = "EMCODER_MODEL";

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    client: reqwest::Client,
    url: String,
    api_key: Option<String>,
    model: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl HttpProvider {
    pub fn new(url: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            url: url.into(),
            api_key,
            model: model.into(),
        }
    }

    /// Reads `EMCODER_PROVIDER_URL`, `EMCODER_PROVIDER_KEY` and `EMCODER_MODEL`.
    pub fn from_env() -> Result<Self, ProviderError> {
        let url = std::env::var(ENV_PROVIDER_URL)
            .map_err(|_| ProviderError::Config(format!("{ENV_PROVIDER_URL} is not set")))?;
        let model = std::env::var(ENV_MODEL).map_err(|_| ProviderError::Config(format!("{ENV_MODEL} is not set")))?;
        Ok(Self::new(url, std::env::var(ENV_PROVIDER_KEY).ok(), model))
    }
}

#[async_trait]
impl Provider for HttpProvider {
    fn identity(&self) -> ProviderIdentity {
        ProviderIdentity {
            provider: "http".into(),
            model: self.model.clone(),
        }
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": request.prompt.system},
                {"role": "user", "content": request.prompt.user},
            ],
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_output_tokens,
        });
        if let Some(seed) = request.params.seed {
            body["seed"] = json!(seed);
        }
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().await.unwrap_or_default();
            return Err(ProviderError::Status {
                status: status.as_u16(),
                body,
            });
        }
        let parsed: ChatResponse = resp.json().await.map_err(|e| ProviderError::Malformed(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Malformed("response has no message content".into()))
    }
}
