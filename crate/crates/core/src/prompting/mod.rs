//! Hierarchy-descending categorization dialogue.
//!
//! A descent starts by offering every tier-1 category, then re-prompts with
//! the children of each accepted node until the model declines, a leaf is
//! reached, or tier 4 is exhausted. Raw replies are parsed strictly: only
//! offered categories are accepted, everything else is a hallucination.

mod descent;
mod parse;
mod template;

pub use descent::{categorize_descent, DescentOptions, DescentStep, DescentTrace, FanOut};
pub use parse::{parse_response, ParsedResponse};
pub use template::{render_prompt, Prompt, PromptError, PromptTemplate, DEFAULT_TEMPLATE};

use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_TOKENS: u32 = 256;

/// Sampling controls passed through to the provider.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    pub max_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_k: None,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

impl std::fmt::Display for DecodingParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "T={} k=", self.temperature)?;
        match self.top_k {
            Some(k) => write!(f, "{k}")?,
            None => f.write_str("-")?,
        }
        write!(f, " max={}", self.max_tokens)
    }
}
