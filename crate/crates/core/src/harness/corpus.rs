use std::collections::{BTreeSet, HashSet};
use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::metrics::{MacroValue, Ratio};
use crate::taxonomy::{CategorySet, Taxonomy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub expert_labels: CategorySet,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub samples: Vec<Sample>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusLine {
    id: serde_json::Value,
    text: String,
    expert_labels: Vec<String>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Content hash over ids, texts and expert labels, in order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.samples {
            h.update(s.id.as_bytes());
            h.update([0]);
            h.update(s.text.as_bytes());
            h.update([0]);
            for l in &s.expert_labels.labels {
                h.update(l.as_str().as_bytes());
                h.update([1]);
            }
            h.update([2]);
        }
        hex::encode(&h.finalize()[..8])
    }

    /// Mean number of expert labels per sample.
    pub fn mean_expert_labels(&self) -> Option<MacroValue> {
        MacroValue::mean(
            self.samples
                .iter()
                .map(|s| Ratio::from_integer(s.expert_labels.labels.len() as u64)),
        )
    }
}

/// Reads a JSON-lines corpus: `{"id", "text", "expert_labels": [id or name, ..]}`.
pub fn ingest_corpus<R: Read>(source: R, taxonomy: &Taxonomy) -> Result<Corpus, HarnessError> {
    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let lineno = i + 1;
        let bad = |reason: String| HarnessError::Ingest {
            line: lineno,
            reason,
        };
        let line = line.map_err(|e| bad(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusLine = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let id = match rec.id {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => return Err(bad(format!("id must be a string or number, got {other}"))),
        };
        if id.is_empty() {
            return Err(bad("empty id".into()));
        }
        if !ids.insert(id.clone()) {
            return Err(bad(format!("duplicate id `{id}`")));
        }
        if rec.text.trim().is_empty() {
            return Err(bad(format!("sample `{id}` has empty text")));
        }
        if rec.expert_labels.is_empty() {
            return Err(bad(format!("sample `{id}` has an empty expert label set")));
        }
        let mut labels = BTreeSet::new();
        for raw in &rec.expert_labels {
            let node = taxonomy
                .resolve_id_or_name(raw)
                .ok_or_else(|| bad(format!("sample `{id}`: expert label `{raw}` is not in the taxonomy")))?;
            labels.insert(node.clone());
        }
        samples.push(Sample {
            id,
            text: rec.text,
            expert_labels: CategorySet::from_labels(labels),
        });
    }
    Ok(Corpus { samples })
}
