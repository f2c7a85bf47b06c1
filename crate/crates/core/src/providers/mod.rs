//! Model providers behind a single blocking `complete` contract.
//!
//! Module structure:
//! - `http` - request/response adapters for chat-style APIs, with retries
//! - `transport` - live, recording and replaying HTTP transports
//! - `mock` - scripted offline provider
//! - `pricing` - shipped per-model token prices
//! - `rate_limit` - per-provider concurrency and request-rate ceilings
//! - `config` - declarative provider config file

pub mod config;
pub mod http;
pub mod mock;
pub mod pricing;
pub mod rate_limit;
pub mod transport;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{PricingModel, TokenUsage};
use crate::prompting::{DecodingParams, Prompt};

pub use config::{build_provider, ProviderConfig, ProviderSpec, TransportMode};
pub use http::{HttpProvider, RetryPolicy};
pub use mock::{mock_provider, MockProvider, MockScript, ScriptedReply};
pub use pricing::{lookup_pricing, pricing_table};
pub use rate_limit::{Clock, RateLimiter, RateLimits, SystemClock, VirtualClock};
pub use transport::{HttpTransport, ReplayTransport, ReqwestTransport, RecordingTransport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    /// OpenAI-compatible `chat/completions` (OpenAI, Groq, Mistral, xAI, DeepSeek).
    OpenaiChat,
    /// Anthropic `messages`.
    Anthropic,
    /// Google `generateContent`.
    Gemini,
    Mock,
}

impl fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::OpenaiChat => "openai-chat",
            Self::Anthropic => "anthropic",
            Self::Gemini => "gemini",
            Self::Mock => "mock",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderProfile {
    pub name: String,
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model_id: String,
    pub pricing: Option<PricingModel>,
    /// Environment variable holding the API key. Keys are never stored in config.
    pub auth_env_var: Option<String>,
    pub limits: RateLimits,
}

impl ProviderProfile {
    pub fn mock(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ProviderKind::Mock,
            endpoint: String::new(),
            model_id: "mock".into(),
            pricing: None,
            auth_env_var: None,
            limits: RateLimits::default(),
        }
    }

    pub fn with_pricing(mut self, pricing: PricingModel) -> Self {
        self.pricing = Some(pricing);
        self
    }

    /// Checks decoding parameters against what this provider's API accepts.
    pub fn validate_params(&self, p: &DecodingParams) -> Result<(), ProviderError> {
        let invalid = |m: String| Err(ProviderError::InvalidParams(m));
        if !p.temperature.is_finite() || p.temperature < 0.0 {
            return invalid(format!("temperature {} must be >= 0", p.temperature));
        }
        if p.max_tokens == 0 {
            return invalid("max_tokens must be positive".into());
        }
        if p.top_k == Some(0) {
            return invalid("top_k must be positive".into());
        }
        let max_temp = match self.kind {
            ProviderKind::Anthropic => 1.0,
            ProviderKind::OpenaiChat | ProviderKind::Gemini => 2.0,
            ProviderKind::Mock => f64::INFINITY,
        };
        if p.temperature > max_temp {
            return invalid(format!(
                "temperature {} exceeds {max_temp} for {} provider `{}`",
                p.temperature, self.kind, self.name
            ));
        }
        if self.kind == ProviderKind::OpenaiChat && p.top_k.is_some() {
            return invalid(format!(
                "provider `{}` ({}) does not accept top_k",
                self.name, self.kind
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    /// Provider-reported usage; `None` when the provider omitted it.
    pub usage: Option<TokenUsage>,
    pub latency: Duration,
    pub attempt_count: u32,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("missing credentials: environment variable `{var}` is not set")]
    AuthMissing { var: String },
    #[error("authentication rejected (HTTP {status})")]
    AuthRejected { status: u16 },
    #[error("HTTP {status} after {attempts} attempt(s): {body}")]
    Http {
        status: u16,
        attempts: u32,
        body: String,
    },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed provider payload: {0}")]
    MalformedPayload(String),
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("invalid decoding parameters: {0}")]
    InvalidParams(String),
    #[error("provider config: {0}")]
    Config(String),
}

/// A configured model endpoint that can answer prompts.
pub trait Provider: Send + Sync {
    fn profile(&self) -> &ProviderProfile;

    fn complete(
        &self,
        prompt: &Prompt,
        params: &DecodingParams,
    ) -> Result<CompletionResult, ProviderError>;

    fn name(&self) -> &str {
        &self.profile().name
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn profile(&self) -> &ProviderProfile {
        (**self).profile()
    }

    fn complete(
        &self,
        prompt: &Prompt,
        params: &DecodingParams,
    ) -> Result<CompletionResult, ProviderError> {
        (**self).complete(prompt, params)
    }
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn profile(&self) -> &ProviderProfile {
        (**self).profile()
    }

    fn complete(
        &self,
        prompt: &Prompt,
        params: &DecodingParams,
    ) -> Result<CompletionResult, ProviderError> {
        (**self).complete(prompt, params)
    }
}
