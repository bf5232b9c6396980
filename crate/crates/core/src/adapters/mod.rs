//! Provider contracts and their deterministic, replay and HTTP implementations.

mod embed;
mod env;
mod http;
mod model;
pub mod toy;

pub use embed::{EmbeddingProvider, HashedBagOfTokens, DEFAULT_EMBEDDING_DIM};
pub use env::{EnvError, Environment, Observation, RecordedEnvironment};
pub use http::{HttpEmbedder, HttpModelProvider, EMBED_ENDPOINT_VAR, MODEL_API_KEY_VAR, MODEL_ENDPOINT_VAR, MODEL_NAME_VAR};
pub use model::{
    CallRecord, MatchRule, ModelProvider, RecordingProvider, ReplayProvider, Rule, RuleProvider, ScriptEntry,
    ScriptedProvider,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("no scripted reply left for call {call} ({surface})")]
    Exhausted { call: usize, surface: String },
    #[error("call {call} ({surface}) does not match scripted entry {entry}: expected {expected}")]
    Unmatched { call: usize, surface: String, entry: usize, expected: String },
    #[error("no rule matches call {call} ({surface})")]
    NoRule { call: usize, surface: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("cannot decode provider response: {0}")]
    Decode(String),
    #[error("provider configuration: {0}")]
    Config(String),
}
