//! Label-level voting across several providers' predictions.
//!
//! Only taxonomy-resolved labels are eligible for a vote, so a combined
//! prediction never carries hallucinations. Votes are counted on exact node
//! ids: an ancestor and its descendant are separate candidates.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::ProviderProfile;
use crate::taxonomy::{CategorySet, NodeId, Taxonomy, TaxonomyError};

pub use crate::harness::run_ensemble_evaluation;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnsembleError {
    #[error("an ensemble needs at least 2 members, got {0}")]
    TooFewMembers(usize),
    #[error("duplicate ensemble member `{0}`")]
    DuplicateMember(String),
    #[error("quorum {q} outside 1..={members}")]
    QuorumOutOfRange { q: usize, members: usize },
    #[error("expected {expected} member predictions, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("unknown vote rule `{0}` (expected majority, quorum:N, intersection or union-per)")]
    UnknownRule(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum VoteRule {
    /// Keep labels named by more than half of the members.
    Majority,
    /// Keep labels named by at least `q` members.
    Quorum(usize),
    /// Keep labels every member named.
    Intersection,
    /// Union of all members' labels, then parent exclusion.
    UnionPer,
}

impl fmt::Display for VoteRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Majority => f.write_str("majority"),
            Self::Quorum(q) => write!(f, "quorum:{q}"),
            Self::Intersection => f.write_str("intersection"),
            Self::UnionPer => f.write_str("union-per"),
        }
    }
}

impl FromStr for VoteRule {
    type Err = EnsembleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "majority" => Ok(Self::Majority),
            "intersection" => Ok(Self::Intersection),
            "union-per" | "union-then-per" => Ok(Self::UnionPer),
            _ => s
                .strip_prefix("quorum:")
                .and_then(|q| q.parse().ok())
                .map(Self::Quorum)
                .ok_or_else(|| EnsembleError::UnknownRule(s.to_string())),
        }
    }
}

impl TryFrom<String> for VoteRule {
    type Error = EnsembleError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<VoteRule> for String {
    fn from(r: VoteRule) -> Self {
        r.to_string()
    }
}

/// What majority voting does with a label named by exactly half the members.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    #[default]
    Drop,
    Keep,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleConfig {
    members: Vec<ProviderProfile>,
    rule: VoteRule,
    tie_break: TieBreak,
}

impl EnsembleConfig {
    pub fn new(
        members: Vec<ProviderProfile>,
        rule: VoteRule,
        tie_break: TieBreak,
    ) -> Result<Self, EnsembleError> {
        if members.len() < 2 {
            return Err(EnsembleError::TooFewMembers(members.len()));
        }
        let mut seen = HashSet::new();
        for m in &members {
            if !seen.insert(m.name.as_str()) {
                return Err(EnsembleError::DuplicateMember(m.name.clone()));
            }
        }
        if let VoteRule::Quorum(q) = rule {
            if q == 0 || q > members.len() {
                return Err(EnsembleError::QuorumOutOfRange {
                    q,
                    members: members.len(),
                });
            }
        }
        Ok(Self {
            members,
            rule,
            tie_break,
        })
    }

    pub fn members(&self) -> &[ProviderProfile] {
        &self.members
    }

    pub fn rule(&self) -> VoteRule {
        self.rule
    }

    pub fn tie_break(&self) -> TieBreak {
        self.tie_break
    }
}

/// Combines one prediction per member into a consensus set. A member that
/// failed on this sample should be passed as an empty set: it casts no votes
/// while thresholds stay relative to the full membership.
pub fn combine(
    predictions: &[CategorySet],
    config: &EnsembleConfig,
    taxonomy: &Taxonomy,
) -> Result<CategorySet, EnsembleError> {
    let n = config.members.len();
    if predictions.len() != n {
        return Err(EnsembleError::ArityMismatch {
            expected: n,
            got: predictions.len(),
        });
    }

    combine_votes(predictions, n, config.rule, config.tie_break, taxonomy)
}

pub(crate) fn combine_votes(
    predictions: &[CategorySet],
    members: usize,
    rule: VoteRule,
    tie_break: TieBreak,
    taxonomy: &Taxonomy,
) -> Result<CategorySet, EnsembleError> {
    let mut votes: BTreeMap<&NodeId, usize> = BTreeMap::new();
    for p in predictions {
        for id in &p.labels {
            *votes.entry(id).or_default() += 1;
        }
    }

    let n = members;
    let keep = |count: usize| match rule {
        VoteRule::Majority => 2 * count > n || (2 * count == n && tie_break == TieBreak::Keep),
        VoteRule::Quorum(q) => count >= q,
        VoteRule::Intersection => count == n,
        VoteRule::UnionPer => count >= 1,
    };
    let labels: BTreeSet<NodeId> = votes
        .into_iter()
        .filter(|&(_, c)| keep(c))
        .map(|(id, _)| id.clone())
        .collect();

    let out = CategorySet::from_labels(labels);
    if rule == VoteRule::UnionPer {
        return Ok(taxonomy.parent_exclusion(&out)?);
    }
    Ok(out)
}
