use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::taxonomy::{normalize_label, NodeId, Taxonomy};

const NONE_TOKEN: &str = "none";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    /// Offered categories the model selected, first-occurrence order.
    pub accepted: Vec<NodeId>,
    /// Tokens that did not resolve, or resolved to a category that was not offered.
    pub extras: Vec<String>,
    /// The whole reply was `None`.
    pub none_flag: bool,
}

/// Splits a comma-separated model reply and resolves each token against the
/// offered categories. Never fails: unusable tokens end up in `extras`.
pub fn parse_response(raw: &str, taxonomy: &Taxonomy, offered: &[NodeId]) -> ParsedResponse {
    if normalize_label(raw) == NONE_TOKEN {
        return ParsedResponse {
            none_flag: true,
            ..Default::default()
        };
    }

    let offered: HashSet<&NodeId> = offered.iter().collect();
    let mut out = ParsedResponse::default();
    let mut seen_ids = HashSet::new();
    let mut seen_extras = HashSet::new();

    for token in raw.split(',') {
        let norm = normalize_label(token);
        if norm.is_empty() || norm == NONE_TOKEN {
            continue;
        }
        match taxonomy.resolve(token) {
            Some(id) if offered.contains(id) => {
                if seen_ids.insert(id.clone()) {
                    out.accepted.push(id.clone());
                }
            }
            _ => {
                if seen_extras.insert(norm) {
                    out.extras.push(token.trim().to_string());
                }
            }
        }
    }
    out
}
