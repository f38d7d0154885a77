//! Provider abstraction, prompt templates, strict JSON parsing and the
//! classifier and critic calls built on them.

mod assets;
mod classify;
mod critic;
mod http;
mod mock;
mod parse;
mod template;

use std::fmt;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::Stage;
use crate::domain::{ComplexityLevel, Element};

pub use assets::{TemplateName, TemplateSet, TemplateSetError};
pub use classify::{
    render_exemplars, EncounterTypeOutput, LlmClient, ENCOUNTER_TYPE_FORMAT, MDM_INITIAL_FORMAT,
};
pub use critic::{critic_format, ConsistencyWarning, CriticCall, Critique};
pub use http::{HttpProvider, ENV_MODEL, ENV_PROVIDER_KEY, ENV_PROVIDER_URL};
pub use mock::{MockProvider, Script, ScriptedReply, StochasticConfig};
pub use parse::{parse_json_response, JsonRecord, ParseError};
pub use template::{render_prompt, Bindings, BlockSwitches, PromptTemplate, TemplateError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_output_tokens: 2048,
            seed: None,
        }
    }
}

/// A rendered (system, user) prompt pair.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

/// Where a provider call sits in the pipeline. Real providers ignore it;
/// the mocks use it to pick deterministic responses regardless of the
/// order concurrent calls arrive in.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CallContext {
    pub encounter_id: String,
    pub template: String,
    pub pass: Option<usize>,
    pub round: Option<usize>,
    pub element: Option<Element>,
    /// Level under review, for critic calls.
    pub prior_level: Option<ComplexityLevel>,
    /// Ordinal of this call among calls to the same template for the same
    /// encounter: the pass index for initial classification,
    /// `pass * rounds + round` for critics, 0 for the encounter type.
    pub call_index: usize,
}

#[derive(Debug, Clone)]
pub struct CompletionRequest {
    pub prompt: Prompt,
    pub params: GenerationParams,
    pub context: CallContext,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderIdentity {
    pub provider: String,
    pub model: String,
}

impl fmt::Display for ProviderIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.provider, self.model)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider transport error: {0}")]
    Transport(String),
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("provider response malformed: {0}")]
    Malformed(String),
    #[error("provider misconfigured: {0}")]
    Config(String),
}

/// A text-completion backend. Must tolerate concurrent in-flight calls.
#[async_trait]
pub trait Provider: Send + Sync {
    fn identity(&self) -> ProviderIdentity;
    async fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmErrorKind {
    #[error(transparent)]
    Transport(#[from] ProviderError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("unknown level name `{name}`")]
    UnknownLevelName { name: String, raw: String },
    #[error("field `{field}`: {reason}")]
    InvalidField { field: String, reason: String, raw: String },
}

/// A classifier or critic failure, tagged with the stage it happened in.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage}: {kind}")]
pub struct LlmError {
    pub stage: Stage,
    pub kind: LlmErrorKind,
}

impl LlmError {
    pub fn new(stage: Stage, kind: impl Into<LlmErrorKind>) -> Self {
        Self {
            stage,
            kind: kind.into(),
        }
    }

    pub fn is_transport(&self) -> bool {
        matches!(self.kind, LlmErrorKind::Transport(_))
    }

    /// Raw provider text, when the failure happened after a response arrived.
    pub fn raw(&self) -> Option<&str> {
        match &self.kind {
            LlmErrorKind::Parse(ParseError::NotJson { raw, .. })
            | LlmErrorKind::Parse(ParseError::SchemaMismatch { raw, .. })
            | LlmErrorKind::UnknownLevelName { raw, .. }
            | LlmErrorKind::InvalidField { raw, .. } => Some(raw),
            _ => None,
        }
    }
}
