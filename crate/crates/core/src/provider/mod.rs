//! Per-round preference sources: a chat-completion LLM, a scripted file and
//! a random-region generator.

pub mod llm;
pub mod parse;
pub mod prompt;
pub mod random;
pub mod scripted;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lift::PreferenceDirective;
use crate::space::SearchSpace;

pub use parse::{format_directive, parse_directive, ParseError, ParseReason};
pub use prompt::{build_system_prompt, build_user_prompt, Observation, PromptBundle, TaskBackground};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Llm,
    Scripted,
    Random,
    None,
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "llm" => Ok(Self::Llm),
            "scripted" => Ok(Self::Scripted),
            "random" => Ok(Self::Random),
            "none" => Ok(Self::None),
            other => Err(format!("unknown provider `{other}` (expected llm, scripted, random or none)")),
        }
    }
}

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const ENDPOINT_ENV: &str = "LGBO_LLM_ENDPOINT";
pub const DEFAULT_KEY_ENV: &str = "LGBO_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub temperature: f64,
    /// Seconds.
    pub timeout: f64,
    pub max_retries: u32,
    pub max_tokens: u32,
    pub script_path: Option<PathBuf>,
    pub region_fraction: f64,
    pub fixed_confidence: f64,
    pub background: TaskBackground,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::None,
            endpoint: DEFAULT_ENDPOINT.into(),
            model: "gpt-4o-mini".into(),
            api_key_env: DEFAULT_KEY_ENV.into(),
            temperature: 0.2,
            timeout: 60.0,
            max_retries: 2,
            max_tokens: 1024,
            script_path: None,
            region_fraction: 0.25,
            fixed_confidence: 0.8,
            background: TaskBackground::default(),
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(self.timeout > 0.0) {
            return Err(ProviderError::Config(format!("timeout must be positive, got {}", self.timeout)));
        }
        if !(self.region_fraction > 0.0 && self.region_fraction <= 1.0) {
            return Err(ProviderError::Config(format!(
                "region_fraction must lie in (0, 1], got {}",
                self.region_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.fixed_confidence) {
            return Err(ProviderError::Config(format!(
                "fixed_confidence must lie in [0, 1], got {}",
                self.fixed_confidence
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("provider unavailable after {attempts} attempt(s): {last}")]
    Unavailable {
        attempts: u32,
        last: String,
        exchanges: Vec<Exchange>,
    },
    #[error("directive rejected: {0}")]
    Rejected(#[from] ParseError),
    #[error("script: {0}")]
    Script(String),
}

impl ProviderError {
    /// Raw I/O gathered before the failure, if any.
    pub fn exchanges(&self) -> &[Exchange] {
        match self {
            ProviderError::Unavailable { exchanges, .. } => exchanges,
            _ => &[],
        }
    }
}

/// Whether the round is part of the initial design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Optimize,
}

/// Everything a provider may look at. History is physical-unit only.
#[derive(Debug, Clone, Copy)]
pub struct RoundContext<'a> {
    /// 1-based trace round.
    pub round: usize,
    pub phase: Phase,
    pub seed: u64,
    pub space: &'a SearchSpace,
    pub history: &'a [Observation],
    pub previous_thinking: &'a str,
}

/// One request/response pair, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: serde_json::Value,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProviderReply {
    pub directive: PreferenceDirective,
    pub retries: u32,
    pub exchanges: Vec<Exchange>,
}

impl ProviderReply {
    pub fn direct(directive: PreferenceDirective) -> Self {
        Self {
            directive,
            retries: 0,
            exchanges: Vec::new(),
        }
    }
}

pub trait PreferenceProvider: Send + Sync {
    fn propose(&self, ctx: &RoundContext<'_>) -> Result<ProviderReply, ProviderError>;
}

/// Builds the provider named by `config.kind`; `None` for [`ProviderKind::None`].
pub fn build_provider(config: &ProviderConfig) -> Result<Option<Box<dyn PreferenceProvider>>, ProviderError> {
    config.validate()?;
    Ok(match config.kind {
        ProviderKind::None => None,
        ProviderKind::Llm => Some(Box::new(llm::LlmProvider::from_config(config)?)),
        ProviderKind::Scripted => {
            let path = config
                .script_path
                .as_ref()
                .ok_or_else(|| ProviderError::Config("scripted provider needs a script path".into()))?;
            Some(Box::new(scripted::ScriptedProvider::from_path(path)?))
        }
        ProviderKind::Random => Some(Box::new(random::RandomRegionProvider::new(
            config.region_fraction,
            config.fixed_confidence,
        ))),
    })
}
