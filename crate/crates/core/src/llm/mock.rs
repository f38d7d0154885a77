//! Deterministic providers for tests and offline runs.
//!
//! Responses are chosen from the call context rather than arrival order, so
//! concurrent passes see the same replies however they are scheduled.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{CompletionRequest, Provider, ProviderError, ProviderIdentity};
use crate::domain::{ComplexityLevel, Element, EncounterType, GoldAnnotation};

/// A canned reply: response text, or a transport failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Text(String),
    Error { error: String },
}

impl ScriptedReply {
    pub fn text(s: impl Into<String>) -> Self {
        ScriptedReply::Text(s.into())
    }

    pub fn error(s: impl Into<String>) -> Self {
        ScriptedReply::Error { error: s.into() }
    }
}

/// Replies keyed by `"<encounter_id>/<template>"` or by `"<template>"` for
/// every encounter. Call `i` to a key gets reply `min(i, len - 1)`, so the
/// last reply repeats.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Script {
    replies: BTreeMap<String, Vec<ScriptedReply>>,
}

impl Script {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, replies: Vec<ScriptedReply>) -> Self {
        self.replies.insert(key.into(), replies);
        self
    }

    pub fn set(&mut self, key: impl Into<String>, replies: Vec<ScriptedReply>) {
        self.replies.insert(key.into(), replies);
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("reading script {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| ProviderError::Config(format!("script {}: {e}", path.display())))
    }

    fn lookup(&self, encounter_id: &str, template: &str, index: usize) -> Option<&ScriptedReply> {
        let replies = self
            .replies
            .get(&format!("{encounter_id}/{template}"))
            .or_else(|| self.replies.get(template))?;
        replies.get(index.min(replies.len().checked_sub(1)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticConfig {
    pub seed: u64,
    /// Probability that an initial element level equals the gold level.
    pub p_correct: f64,
    pub gold: BTreeMap<String, GoldAnnotation>,
}

impl StochasticConfig {
    pub fn new(seed: u64, p_correct: f64, golds: impl IntoIterator<Item = GoldAnnotation>) -> Self {
        Self {
            seed,
            p_correct,
            gold: golds.into_iter().map(|g| (g.encounter_id.clone(), g)).collect(),
        }
    }
}

enum Mode {
    Scripted(Script),
    Stochastic(StochasticConfig),
}

pub struct MockProvider {
    mode: Mode,
    calls: AtomicUsize,
}

impl std::fmt::Debug for MockProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MockProvider").field("identity", &self.identity()).finish()
    }
}

/// Per-call generator seeded from the run seed and the call position.
fn call_rng(seed: u64, request: &CompletionRequest) -> ChaCha8Rng {
    let ctx = &request.context;
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(ctx.encounter_id.as_bytes());
    hasher.update([0]);
    hasher.update(ctx.template.as_bytes());
    hasher.update([0]);
    hasher.update((ctx.call_index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

impl MockProvider {
    pub fn scripted(script: Script) -> Self {
        Self {
            mode: Mode::Scripted(script),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn stochastic(config: StochasticConfig) -> Self {
        Self {
            mode: Mode::Stochastic(config),
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of completed `complete` calls.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn stochastic_reply(config: &StochasticConfig, request: &CompletionRequest) -> Result<String, ProviderError> {
        let ctx = &request.context;
        let gold = config
            .gold
            .get(&ctx.encounter_id)
            .ok_or_else(|| ProviderError::Config(format!("no gold labels for encounter `{}`", ctx.encounter_id)))?;
        let mut rng = call_rng(config.seed, request);
        let reply = match ctx.template.as_str() {
            "encounter_type" => {
                let label = gold
                    .encounter_type
                    .clone()
                    .unwrap_or(EncounterType::OfficeOrOutpatient)
                    .label()
                    .to_string();
                json!({"encounter_type": label, "explanation": "stochastic mock"})
            }
            "mdm_initial" => {
                let mut out = serde_json::Map::new();
                for element in Element::ALL {
                    let truth = *gold.levels().get(element);
                    let level = if rng.random::<f64>() < config.p_correct {
                        truth
                    } else {
                        let others: Vec<ComplexityLevel> =
                            ComplexityLevel::ALL.into_iter().filter(|l| *l != truth).collect();
                        others[rng.random_range(0..others.len())]
                    };
                    out.insert(
                        element.as_str().to_string(),
                        json!({"level": level.name(), "justification": "stochastic mock", "cot": ""}),
                    );
                }
                serde_json::Value::Object(out)
            }
            "critic_problem" | "critic_data" | "critic_risk" => {
                let prior = ctx
                    .prior_level
                    .ok_or_else(|| ProviderError::Config("critic call without a prior level".into()))?;
                let mut reply = json!({
                    "revised_level": prior.name(),
                    "per_instruction_reasoning": ["stochastic mock: confirmed"],
                });
                if ctx.template == "critic_data" {
                    reply["data_items"] = json!([]);
                }
                reply
            }
            other => return Err(ProviderError::Config(format!("no stochastic rule for template `{other}`"))),
        };
        Ok(reply.to_string())
    }
}

#[async_trait]
impl Provider for MockProvider {
    fn identity(&self) -> ProviderIdentity {
        let provider = match self.mode {
            Mode::Scripted(_) => "mock-scripted",
            Mode::Stochastic(_) => "mock-stochastic",
        };
        ProviderIdentity {
            provider: provider.into(),
            model: "mock".into(),
        }
    }

    async fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let result = match &self.mode {
            Mode::Scripted(script) => {
                let ctx = &request.context;
                match script.lookup(&ctx.encounter_id, &ctx.template, ctx.call_index) {
                    Some(ScriptedReply::Text(text)) => Ok(text.clone()),
                    Some(ScriptedReply::Error { error }) => Err(ProviderError::Transport(error.clone())),
                    None => Err(ProviderError::Config(format!(
                        "no scripted reply for `{}/{}`",
                        ctx.encounter_id, ctx.template
                    ))),
                }
            }
            Mode::Stochastic(config) => Self::stochastic_reply(config, request),
        };
        self.calls.fetch_add(1, Ordering::SeqCst);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{CallContext, GenerationParams, Prompt};

    fn request(encounter: &str, template: &str, index: usize) -> CompletionRequest {
        CompletionRequest {
            prompt: Prompt::default(),
            params: GenerationParams::default(),
            context: CallContext {
                encounter_id: encounter.into(),
                template: template.into(),
                call_index: index,
                ..Default::default()
            },
        }
    }

    #[tokio::test]
    async fn script_lookup_prefers_encounter_key_and_repeats_last() {
        let script = Script::new()
            .with("mdm_initial", vec![ScriptedReply::text("generic")])
            .with("e1/mdm_initial", vec![ScriptedReply::text("a"), ScriptedReply::error("down")]);
        let mock = MockProvider::scripted(script);
        assert_eq!(mock.complete(&request("e1", "mdm_initial", 0)).await.unwrap(), "a");
        assert_eq!(
            mock.complete(&request("e1", "mdm_initial", 5)).await,
            Err(ProviderError::Transport("down".into()))
        );
        assert_eq!(mock.complete(&request("e2", "mdm_initial", 3)).await.unwrap(), "generic");
        assert!(matches!(
            mock.complete(&request("e2", "critic_risk", 0)).await,
            Err(ProviderError::Config(_))
        ));
        assert_eq!(mock.calls(), 4);
    }

    #[test]
    fn script_file_format() {
        let script = Script::from_json(r#"{"encounter_type": ["{}", {"error": "timeout"}]}"#).unwrap();
        assert_eq!(script.lookup("x", "encounter_type", 1), Some(&ScriptedReply::error("timeout")));
        assert_eq!(script.lookup("x", "encounter_type", 0), Some(&ScriptedReply::text("{}")));
    }

    #[tokio::test]
    async fn stochastic_is_reproducible_per_call_position() {
        let gold: GoldAnnotation = serde_json::from_value(json!({
            "encounter_id": "e1", "cpt_code": "99203", "problem": "Low", "data": "Straightforward", "risk": "Low"
        }))
        .unwrap();
        let a = MockProvider::stochastic(StochasticConfig::new(7, 0.5, [gold.clone()]));
        let b = MockProvider::stochastic(StochasticConfig::new(7, 0.5, [gold]));
        for i in 0..10 {
            let ra = a.complete(&request("e1", "mdm_initial", i)).await.unwrap();
            let rb = b.complete(&request("e1", "mdm_initial", i)).await.unwrap();
            assert_eq!(ra, rb);
        }
        assert!(matches!(
            a.complete(&request("nope", "mdm_initial", 0)).await,
            Err(ProviderError::Config(_))
        ));
    }
}
