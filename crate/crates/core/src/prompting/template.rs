use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

const PLACEHOLDER: &str = "{categories}";
const SEPARATOR: &str = ", ";

pub const DEFAULT_TEMPLATE: &str = "Your job is to categorize unstructured text according to the \
following list of categories. You will be given a certain amount of text from the text. Your \
response should contain only the categories, with no other text. If the text fits multiple \
categories, output them separated by a comma and a space. Categories are separated via comma. You \
may not output categories not in the list. If no categories fit the text, output 'None'. \
Categories: {categories}";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template must contain exactly one `{{categories}}` placeholder, found {0}")]
    Placeholder(usize),
    #[error("cannot render a prompt with no categories")]
    NoCategories,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PromptTemplate {
    body: String,
}

impl PromptTemplate {
    pub fn new(body: impl Into<String>) -> Result<Self, PromptError> {
        let body = body.into();
        match body.matches(PLACEHOLDER).count() {
            1 => Ok(Self { body }),
            n => Err(PromptError::Placeholder(n)),
        }
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Short content hash, used to tie persisted runs to the template they used.
    pub fn fingerprint(&self) -> String {
        hex::encode(&Sha256::digest(self.body.as_bytes())[..8])
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            body: DEFAULT_TEMPLATE.to_string(),
        }
    }
}

impl TryFrom<String> for PromptTemplate {
    type Error = PromptError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<PromptTemplate> for String {
    fn from(t: PromptTemplate) -> Self {
        t.body
    }
}

/// Substitutes the comma-joined category names into the template.
pub fn render_prompt<S: AsRef<str>>(
    template: &PromptTemplate,
    offered: &[S],
) -> Result<String, PromptError> {
    if offered.is_empty() {
        return Err(PromptError::NoCategories);
    }
    let joined = offered
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(SEPARATOR);
    Ok(template.body.replacen(PLACEHOLDER, &joined, 1))
}

/// One request in a descent: rendered instructions plus the document text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub instructions: String,
    pub text: String,
}

impl Prompt {
    pub fn new(instructions: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            instructions: instructions.into(),
            text: text.into(),
        }
    }

    /// Stable hex digest of the request content; decoding params are not part of it.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.instructions.as_bytes());
        h.update([0u8]);
        h.update(self.text.as_bytes());
        hex::encode(h.finalize())
    }
}

impl fmt::Display for Prompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\n\n{}", self.instructions, self.text)
    }
}
