//! Declarative provider config (TOML).
//!
//! ```toml
//! [[provider]]
//! name = "GPT 120B"
//! kind = "openai-chat"
//! endpoint = "https://api.groq.com/openai/v1/chat/completions"
//! model_id = "openai/gpt-oss-120b"
//! auth_env_var = "GROQ_API_KEY"
//! max_concurrent = 5
//! requests_per_minute = 30
//!
//! [[provider]]
//! name = "scripted"
//! kind = "mock"
//! script = "mock_script.jsonl"
//! input_price = "0.075"
//! output_price = "0.30"
//! ```
//!
//! Prices default to the shipped table entry matching `pricing` (or `name`).
//! Credentials are only ever read from the named environment variable.

use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::http::{HttpProvider, RetryPolicy};
use super::mock::{MockProvider, MockScript, ScriptedReply};
use super::pricing::lookup_pricing;
use super::rate_limit::{RateLimits, SystemClock};
use super::transport::{HttpTransport, RecordingTransport, ReplayTransport, ReqwestTransport};
use super::{Provider, ProviderError, ProviderKind, ProviderProfile};
use crate::metrics::PricingModel;
use crate::prompting::PromptTemplate;

const REQUEST_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSpec {
    pub name: String,
    pub kind: ProviderKind,
    #[serde(default)]
    pub endpoint: String,
    #[serde(default)]
    pub model_id: String,
    #[serde(default)]
    pub auth_env_var: Option<String>,
    /// Key into the shipped pricing table; defaults to `name`.
    #[serde(default)]
    pub pricing: Option<String>,
    #[serde(default)]
    pub input_price: Option<Decimal>,
    #[serde(default)]
    pub output_price: Option<Decimal>,
    #[serde(default)]
    pub max_concurrent: Option<usize>,
    #[serde(default)]
    pub requests_per_minute: Option<u32>,
    /// Mock only: script file, relative to the config file.
    #[serde(default)]
    pub script: Option<PathBuf>,
    /// Mock only: reply to unscripted prompts.
    #[serde(default)]
    pub default_response: Option<String>,
}

impl ProviderSpec {
    pub fn resolve_pricing(&self) -> Result<Option<PricingModel>, ProviderError> {
        match (self.input_price, self.output_price) {
            (Some(i), Some(o)) => {
                if i.is_sign_negative() || o.is_sign_negative() {
                    return Err(ProviderError::Config(format!(
                        "provider `{}`: prices must be >= 0",
                        self.name
                    )));
                }
                Ok(Some(PricingModel::new(i, o)))
            }
            (None, None) => Ok(lookup_pricing(self.pricing.as_deref().unwrap_or(&self.name))),
            _ => Err(ProviderError::Config(format!(
                "provider `{}`: set both input_price and output_price or neither",
                self.name
            ))),
        }
    }

    pub fn profile(&self) -> Result<ProviderProfile, ProviderError> {
        if self.kind != ProviderKind::Mock && self.endpoint.is_empty() {
            return Err(ProviderError::Config(format!(
                "provider `{}` has no endpoint",
                self.name
            )));
        }
        let defaults = RateLimits::default();
        Ok(ProviderProfile {
            name: self.name.clone(),
            kind: self.kind,
            endpoint: self.endpoint.clone(),
            model_id: self.model_id.clone(),
            pricing: self.resolve_pricing()?,
            auth_env_var: self.auth_env_var.clone(),
            limits: RateLimits {
                max_concurrent: self.max_concurrent.unwrap_or(defaults.max_concurrent),
                requests_per_minute: self.requests_per_minute,
            },
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    #[serde(default, rename = "provider")]
    pub providers: Vec<ProviderSpec>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ProviderConfig {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, ProviderError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| ProviderError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        let mut seen = std::collections::HashSet::new();
        for p in &cfg.providers {
            if !seen.insert(p.name.as_str()) {
                return Err(ProviderError::Config(format!("duplicate provider `{}`", p.name)));
            }
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn get(&self, name: &str) -> Option<&ProviderSpec> {
        self.providers.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum TransportMode {
    #[default]
    Live,
    /// Live requests, with every exchange appended to this fixture file.
    Record(PathBuf),
    /// Serve responses from this fixture file only.
    Replay(PathBuf),
}

/// Instantiates a provider from its config entry.
pub fn build_provider(
    spec: &ProviderSpec,
    base_dir: &Path,
    mode: &TransportMode,
    template: &PromptTemplate,
) -> Result<Arc<dyn Provider>, ProviderError> {
    let profile = spec.profile()?;
    if spec.kind == ProviderKind::Mock {
        let mut script = match &spec.script {
            Some(rel) => {
                let path = base_dir.join(rel);
                let f = File::open(&path)
                    .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
                MockScript::load(f, template)?
            }
            None => MockScript::default(),
        };
        if let Some(d) = &spec.default_response {
            script = script.with_default(ScriptedReply::new(d.clone(), Some(Default::default())));
        }
        return Ok(Arc::new(MockProvider::new(profile, script)));
    }

    let transport_err = |e: super::transport::TransportError| ProviderError::Config(e.to_string());
    let clock = Arc::new(SystemClock::default());
    let (transport, replaying): (Arc<dyn HttpTransport>, bool) = match mode {
        TransportMode::Live => (
            Arc::new(ReqwestTransport::new(REQUEST_TIMEOUT).map_err(transport_err)?),
            false,
        ),
        TransportMode::Record(path) => (
            Arc::new(
                RecordingTransport::new(
                    ReqwestTransport::new(REQUEST_TIMEOUT).map_err(transport_err)?,
                    path,
                )
                .map_err(transport_err)?,
            ),
            false,
        ),
        TransportMode::Replay(path) => (
            Arc::new(ReplayTransport::open(path).map_err(transport_err)?),
            true,
        ),
    };
    let provider = HttpProvider::new(profile, transport, clock, RetryPolicy::default())?;
    if replaying {
        return Ok(Arc::new(provider.without_auth()));
    }
    provider.check_auth()?;
    Ok(Arc::new(provider))
}
