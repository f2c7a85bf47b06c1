//! Scripted, offline provider.
//!
//! Replies are looked up by the fingerprint of the full prompt (rendered
//! instructions plus text). Decoding parameters are ignored. Any prompt not in
//! the script gets the default reply, `None` unless configured otherwise.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{CompletionResult, Provider, ProviderError, ProviderProfile};
use crate::metrics::TokenUsage;
use crate::prompting::{render_prompt, DecodingParams, Prompt, PromptTemplate};
use crate::taxonomy::{NodeId, Taxonomy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedReply {
    pub text: String,
    #[serde(default)]
    pub usage: Option<TokenUsage>,
}

impl ScriptedReply {
    pub fn new(text: impl Into<String>, usage: Option<TokenUsage>) -> Self {
        Self {
            text: text.into(),
            usage,
        }
    }
}

impl Default for ScriptedReply {
    fn default() -> Self {
        Self::new("None", Some(TokenUsage::default()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MockScript {
    replies: HashMap<String, ScriptedReply>,
    default: ScriptedReply,
}

/// One line of a mock script file.
#[derive(Debug, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum ScriptLine {
    Default {
        default: String,
        #[serde(default)]
        usage: Option<TokenUsage>,
    },
    Fingerprint {
        fingerprint: String,
        response: String,
        #[serde(default)]
        usage: Option<TokenUsage>,
    },
    Request {
        text: String,
        categories: Vec<String>,
        response: String,
        #[serde(default)]
        usage: Option<TokenUsage>,
    },
}

impl MockScript {
    pub fn new(
        entries: impl IntoIterator<Item = (String, ScriptedReply)>,
    ) -> Result<Self, ProviderError> {
        let mut script = Self::default();
        for (fp, reply) in entries {
            script.insert(fp, reply)?;
        }
        Ok(script)
    }

    pub fn with_default(mut self, reply: ScriptedReply) -> Self {
        self.default = reply;
        self
    }

    pub fn len(&self) -> usize {
        self.replies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.replies.is_empty()
    }

    pub fn insert(&mut self, fingerprint: String, reply: ScriptedReply) -> Result<(), ProviderError> {
        if self.replies.contains_key(&fingerprint) {
            return Err(ProviderError::Config(format!(
                "duplicate mock fingerprint {fingerprint}"
            )));
        }
        self.replies.insert(fingerprint, reply);
        Ok(())
    }

    pub fn insert_prompt(&mut self, prompt: &Prompt, reply: ScriptedReply) -> Result<(), ProviderError> {
        self.insert(prompt.fingerprint(), reply)
    }

    /// Scripts the reply to the prompt offering `categories` for `text`.
    pub fn insert_request<S: AsRef<str>>(
        &mut self,
        template: &PromptTemplate,
        text: &str,
        categories: &[S],
        reply: ScriptedReply,
    ) -> Result<(), ProviderError> {
        let rendered =
            render_prompt(template, categories).map_err(|e| ProviderError::Config(e.to_string()))?;
        self.insert_prompt(&Prompt::new(rendered, text), reply)
    }

    /// Scripts a full descent for `text` that ends exactly on the deepest of
    /// `labels`: at every step the reply names the offered categories that are
    /// targets or ancestors of targets. Unscripted steps fall back to the
    /// default reply.
    pub fn insert_descent(
        &mut self,
        taxonomy: &Taxonomy,
        template: &PromptTemplate,
        text: &str,
        labels: &[NodeId],
        usage: Option<TokenUsage>,
    ) -> Result<(), ProviderError> {
        let mut wanted = BTreeSet::new();
        for id in labels {
            let chain = taxonomy
                .ancestors(id)
                .map_err(|e| ProviderError::Config(e.to_string()))?;
            wanted.insert(id.clone());
            wanted.extend(chain.into_iter().cloned());
        }

        let mut frontier: Vec<Vec<NodeId>> = vec![taxonomy.roots().map(|n| n.id.clone()).collect()];
        while let Some(offered) = frontier.pop() {
            let picked: Vec<&NodeId> = offered.iter().filter(|id| wanted.contains(*id)).collect();
            if picked.is_empty() {
                continue;
            }
            let names: Vec<&str> = offered.iter().filter_map(|id| taxonomy.name_of(id)).collect();
            let answer: Vec<&str> = picked.iter().filter_map(|id| taxonomy.name_of(id)).collect();
            self.insert_request(template, text, &names, ScriptedReply::new(answer.join(", "), usage))?;
            for id in picked {
                let kids: Vec<NodeId> = taxonomy.children(id).map(|n| n.id.clone()).collect();
                if !kids.is_empty() {
                    frontier.push(kids);
                }
            }
        }
        Ok(())
    }

    /// Reads a JSON-lines script. Each line is one of
    /// `{"default": TEXT, "usage"?}`,
    /// `{"fingerprint": HEX, "response": TEXT, "usage"?}`, or
    /// `{"text": DOC, "categories": [NAME..], "response": TEXT, "usage"?}`;
    /// the last form is rendered with `template` to obtain its fingerprint.
    pub fn load<R: Read>(source: R, template: &PromptTemplate) -> Result<Self, ProviderError> {
        let mut script = Self::default();
        for (i, line) in BufReader::new(source).lines().enumerate() {
            let line = line.map_err(|e| ProviderError::Config(e.to_string()))?;
            if line.trim().is_empty() || line.trim_start().starts_with("//") {
                continue;
            }
            let parsed: ScriptLine = serde_json::from_str(&line)
                .map_err(|e| ProviderError::Config(format!("mock script line {}: {e}", i + 1)))?;
            let at_line = |e: ProviderError| ProviderError::Config(format!("mock script line {}: {e}", i + 1));
            match parsed {
                ScriptLine::Default { default, usage } => {
                    script.default = ScriptedReply::new(default, usage.or(Some(TokenUsage::default())));
                }
                ScriptLine::Fingerprint {
                    fingerprint,
                    response,
                    usage,
                } => script
                    .insert(fingerprint, ScriptedReply::new(response, usage))
                    .map_err(at_line)?,
                ScriptLine::Request {
                    text,
                    categories,
                    response,
                    usage,
                } => script
                    .insert_request(template, &text, &categories, ScriptedReply::new(response, usage))
                    .map_err(at_line)?,
            }
        }
        Ok(script)
    }

    pub fn reply(&self, prompt: &Prompt) -> &ScriptedReply {
        self.replies.get(&prompt.fingerprint()).unwrap_or(&self.default)
    }
}

/// Deterministic, zero-latency, offline provider.
#[derive(Debug, Clone)]
pub struct MockProvider {
    profile: ProviderProfile,
    script: Arc<MockScript>,
}

impl MockProvider {
    pub fn new(profile: ProviderProfile, script: MockScript) -> Self {
        Self {
            profile,
            script: Arc::new(script),
        }
    }
}

pub fn mock_provider(script: MockScript) -> MockProvider {
    MockProvider::new(ProviderProfile::mock("mock"), script)
}

impl Provider for MockProvider {
    fn profile(&self) -> &ProviderProfile {
        &self.profile
    }

    fn complete(
        &self,
        prompt: &Prompt,
        params: &DecodingParams,
    ) -> Result<CompletionResult, ProviderError> {
        self.profile.validate_params(params)?;
        let reply = self.script.reply(prompt);
        Ok(CompletionResult {
            text: reply.text.clone(),
            usage: reply.usage,
            latency: Duration::ZERO,
            attempt_count: 1,
        })
    }
}
