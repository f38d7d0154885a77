//! Option resolution: flag, then environment, then config file, then default.
//!
//! Flags and environment variables are merged by clap; each field stays
//! `None` when neither is given so the config file can fill it.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use emcoder_core::domain::GoldAnnotation;
use emcoder_core::llm::{
    GenerationParams, HttpProvider, LlmClient, MockProvider, Provider, Script, StochasticConfig, TemplateSet,
};
use emcoder_core::pipeline::{Pipeline, PipelineConfig};
use emcoder_core::retrieval::{Embedder, ExemplarStore, HashedBagOfWords, HttpEmbedder};
use emcoder_core::rules::CodeMappingConfig;
use serde::Deserialize;

pub const ENV_EMBEDDER_URL: &str = "EMCODER_EMBEDDER_URL";
pub const ENV_EMBEDDER_MODEL: &str = "EMCODER_EMBEDDER_MODEL";
pub const ENV_EMBEDDER_DIM: &str = "EMCODER_EMBEDDER_DIM";
pub const DEFAULT_EMBEDDER_DIM: usize = 1536;
pub const DEFAULT_P_CORRECT: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    MockScripted,
    MockStochastic,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    Hash,
    Http,
}

/// Pipeline and provider options shared by `code` and `serve`.
#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// Independent passes voted per element.
    #[arg(long, env = "EMCODER_K")]
    pub k: Option<usize>,
    /// Critic rounds per element and pass.
    #[arg(long = "rci-rounds", env = "EMCODER_RCI_ROUNDS")]
    pub rci_rounds: Option<usize>,
    /// Exemplars retrieved per prompt; 0 is zero-shot.
    #[arg(long = "top-n", env = "EMCODER_TOP_N")]
    pub top_n: Option<usize>,
    #[arg(long, env = "EMCODER_TEMPERATURE")]
    pub temperature: Option<f64>,
    #[arg(long, value_enum, env = "EMCODER_PROVIDER")]
    pub provider: Option<ProviderKind>,
    #[arg(long, env = "EMCODER_SEED")]
    pub seed: Option<u64>,
    /// Per-call accuracy of the stochastic mock.
    #[arg(long = "p-correct", env = "EMCODER_P_CORRECT")]
    pub p_correct: Option<f64>,
    /// CPT mapping file; the built-in table when absent.
    #[arg(long, env = "EMCODER_MAPPING")]
    pub mapping: Option<PathBuf>,
    /// Reply script for the scripted mock.
    #[arg(long, env = "EMCODER_SCRIPT")]
    pub script: Option<PathBuf>,
    /// Directory overriding the built-in prompt templates.
    #[arg(long, env = "EMCODER_TEMPLATES")]
    pub templates: Option<PathBuf>,
    /// Exemplar store written by `emcoder index`.
    #[arg(long, env = "EMCODER_STORE")]
    pub store: Option<PathBuf>,
    #[arg(long, value_enum, env = "EMCODER_EMBEDDER")]
    pub embedder: Option<EmbedderKind>,
    /// Let an encounter retrieve itself as an exemplar.
    #[arg(long = "no-leave-one-out")]
    pub no_leave_one_out: bool,
}

/// Config file contents. Relative paths resolve against the file's directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub k: Option<usize>,
    pub rci_rounds: Option<usize>,
    pub top_n: Option<usize>,
    pub temperature: Option<f64>,
    pub provider: Option<ProviderKind>,
    pub seed: Option<u64>,
    pub p_correct: Option<f64>,
    pub mapping: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub embedder: Option<EmbedderKind>,
    pub leave_one_out: Option<bool>,
    pub server: Option<String>,
    pub listen: Option<String>,
    pub data_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: FileConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut config.mapping,
            &mut config.script,
            &mut config.templates,
            &mut config.store,
            &mut config.data_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub k: usize,
    pub rci_rounds: usize,
    pub top_n: usize,
    pub temperature: f64,
    pub provider: ProviderKind,
    pub seed: Option<u64>,
    pub p_correct: f64,
    pub mapping: Option<PathBuf>,
    pub script: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub store: Option<PathBuf>,
    pub embedder: EmbedderKind,
    pub leave_one_out: bool,
}

impl Settings {
    pub fn resolve(args: &PipelineArgs, file: &FileConfig) -> Self {
        let defaults = PipelineConfig::default();
        Self {
            k: args.k.or(file.k).unwrap_or(defaults.k_votes),
            rci_rounds: args.rci_rounds.or(file.rci_rounds).unwrap_or(defaults.rci_rounds),
            top_n: args.top_n.or(file.top_n).unwrap_or(defaults.top_n),
            temperature: args.temperature.or(file.temperature).unwrap_or(defaults.params.temperature),
            provider: args.provider.or(file.provider).unwrap_or(ProviderKind::Http),
            seed: args.seed.or(file.seed),
            p_correct: args.p_correct.or(file.p_correct).unwrap_or(DEFAULT_P_CORRECT),
            mapping: args.mapping.clone().or_else(|| file.mapping.clone()),
            script: args.script.clone().or_else(|| file.script.clone()),
            templates: args.templates.clone().or_else(|| file.templates.clone()),
            store: args.store.clone().or_else(|| file.store.clone()),
            embedder: args.embedder.or(file.embedder).unwrap_or(EmbedderKind::Hash),
            leave_one_out: !args.no_leave_one_out && file.leave_one_out.unwrap_or(true),
        }
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let mapping = match &self.mapping {
            Some(path) => CodeMappingConfig::load(path)?,
            None => CodeMappingConfig::default(),
        };
        Ok(PipelineConfig {
            k_votes: self.k,
            rci_rounds: self.rci_rounds,
            top_n: self.top_n,
            params: GenerationParams {
                temperature: self.temperature,
                seed: self.seed,
                ..GenerationParams::default()
            },
            leave_one_out: self.leave_one_out,
            mapping,
        })
    }

    /// `golds` feed the stochastic mock; other providers ignore them.
    pub fn provider(&self, golds: Vec<GoldAnnotation>) -> Result<Arc<dyn Provider>> {
        Ok(match self.provider {
            ProviderKind::MockScripted => {
                let Some(path) = &self.script else {
                    bail!("--provider mock-scripted needs --script");
                };
                Arc::new(MockProvider::scripted(Script::load(path)?))
            }
            ProviderKind::MockStochastic => {
                if !(0.0..=1.0).contains(&self.p_correct) {
                    bail!("--p-correct must be within [0, 1]");
                }
                Arc::new(MockProvider::stochastic(StochasticConfig::new(
                    self.seed.unwrap_or(0),
                    self.p_correct,
                    golds,
                )))
            }
            ProviderKind::Http => Arc::new(HttpProvider::from_env()?),
        })
    }

    pub fn pipeline(&self, golds: Vec<GoldAnnotation>) -> Result<Pipeline> {
        let templates = match &self.templates {
            Some(dir) => TemplateSet::from_dir(dir)?,
            None => TemplateSet::builtin(),
        };
        let client = LlmClient::new(self.provider(golds)?, Arc::new(templates));
        Ok(Pipeline::new(self.pipeline_config()?, client)?)
    }

    pub fn exemplar_store(&self) -> Result<ExemplarStore> {
        let embedder = embedder(self.embedder)?;
        match &self.store {
            Some(path) => ExemplarStore::load(path, embedder).with_context(|| format!("loading {}", path.display())),
            None => Ok(ExemplarStore::new(embedder)),
        }
    }
}

pub fn embedder(kind: EmbedderKind) -> Result<Arc<dyn Embedder>> {
    Ok(match kind {
        EmbedderKind::Hash => Arc::new(HashedBagOfWords::default()),
        EmbedderKind::Http => {
            let url = std::env::var(ENV_EMBEDDER_URL).with_context(|| format!("{ENV_EMBEDDER_URL} is not set"))?;
            let model =
                std::env::var(ENV_EMBEDDER_MODEL).with_context(|| format!("{ENV_EMBEDDER_MODEL} is not set"))?;
            let dimension = match std::env::var(ENV_EMBEDDER_DIM) {
                Ok(v) => v.parse().with_context(|| format!("{ENV_EMBEDDER_DIM} is not a number"))?,
                Err(_) => DEFAULT_EMBEDDER_DIM,
            };
            let key = std::env::var(emcoder_core::llm::ENV_PROVIDER_KEY).ok();
            Arc::new(HttpEmbedder::new(url, key, model, dimension))
        }
    })
}
