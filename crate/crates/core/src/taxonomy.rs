//! The category hierarchy: loading, label normalization, ancestry queries and
//! the parent exclusion rule.
//!
//! A [`Taxonomy`] is a forest of at most four tiers. Nodes are addressed by
//! their canonical [`NodeId`] (the file's id column); human-readable names are
//! indexed in normalized form so model output can be resolved back to nodes.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Deepest tier a taxonomy may contain.
pub const MAX_TIER: u8 = 4;

const HEADER: [&str; 4] = ["id", "tier", "parent_id", "name"];

/// Canonical identifier of a taxonomy node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyNode {
    pub id: NodeId,
    pub name: String,
    pub tier: u8,
    pub parent: Option<NodeId>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("taxonomy file is missing the header row")]
    MissingHeader,
    #[error("row {row}: malformed row: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("row {row}: duplicate id `{id}`")]
    DuplicateId { row: usize, id: String },
    #[error("row {row}: name `{name}` collides with another node after normalization")]
    DuplicateName { row: usize, name: String },
    #[error("row {row}: parent `{parent}` does not exist")]
    DanglingParent { row: usize, parent: String },
    #[error("row {row}: tier {tier} does not follow parent tier {parent_tier}")]
    TierDiscontinuity {
        row: usize,
        tier: u8,
        parent_tier: u8,
    },
    #[error("unknown node id `{0}`")]
    UnknownId(String),
    #[error("io error reading taxonomy: {0}")]
    Io(String),
}

/// Trims, collapses internal whitespace runs to a single space, and case-folds.
pub fn normalize_label(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for (i, word) in raw.split_whitespace().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&word.to_lowercase());
    }
    out
}

/// Which strict descendants cause an ancestor to be dropped by
/// [`Taxonomy::parent_exclusion_with`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExclusionScope {
    /// Drop a node when any strict descendant is present.
    #[default]
    AnyDescendant,
    /// Drop a node only when one of its direct children is present.
    DirectChild,
}

/// An immutable, validated category forest.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    nodes: Vec<TaxonomyNode>,
    by_id: HashMap<NodeId, usize>,
    by_name: HashMap<String, usize>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    roots: Vec<usize>,
}

impl Taxonomy {
    /// Reads the tab-separated taxonomy format: a header row
    /// `id<TAB>tier<TAB>parent_id<TAB>name`, then one node per row with `-`
    /// marking an absent parent. Blank lines and `#` comments are skipped.
    pub fn load<R: Read>(source: R) -> Result<Self, TaxonomyError> {
        let reader = BufReader::new(source);
        let mut rows = Vec::new();
        let mut saw_header = false;

        for (idx, line) in reader.lines().enumerate() {
            let row = idx + 1;
            let line = line.map_err(|e| TaxonomyError::Io(e.to_string()))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            if !saw_header {
                let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
                if cols.len() != 4 || !cols[0].eq_ignore_ascii_case(HEADER[0]) {
                    return Err(TaxonomyError::MissingHeader);
                }
                saw_header = true;
                continue;
            }
            rows.push((row, parse_row(row, line)?));
        }
        if !saw_header {
            return Err(TaxonomyError::MissingHeader);
        }
        Self::from_rows(rows)
    }

    /// Builds a taxonomy from nodes, validating every invariant. Row numbers
    /// in errors are 1-based positions in `nodes`.
    pub fn from_nodes(nodes: Vec<TaxonomyNode>) -> Result<Self, TaxonomyError> {
        Self::from_rows(nodes.into_iter().enumerate().map(|(i, n)| (i + 1, n)).collect())
    }

    fn from_rows(rows: Vec<(usize, TaxonomyNode)>) -> Result<Self, TaxonomyError> {
        let mut by_id = HashMap::with_capacity(rows.len());
        let mut by_name = HashMap::with_capacity(rows.len());
        for (idx, (row, node)) in rows.iter().enumerate() {
            if by_id.insert(node.id.clone(), idx).is_some() {
                return Err(TaxonomyError::DuplicateId {
                    row: *row,
                    id: node.id.0.clone(),
                });
            }
            if by_name.insert(normalize_label(&node.name), idx).is_some() {
                return Err(TaxonomyError::DuplicateName {
                    row: *row,
                    name: node.name.clone(),
                });
            }
        }

        let mut parent = vec![None; rows.len()];
        let mut children = vec![Vec::new(); rows.len()];
        let mut roots = Vec::new();
        for (idx, (row, node)) in rows.iter().enumerate() {
            match &node.parent {
                None => roots.push(idx),
                Some(pid) => {
                    let &pidx = by_id.get(pid).ok_or_else(|| TaxonomyError::DanglingParent {
                        row: *row,
                        parent: pid.0.clone(),
                    })?;
                    let parent_tier = rows[pidx].1.tier;
                    if node.tier != parent_tier + 1 {
                        return Err(TaxonomyError::TierDiscontinuity {
                            row: *row,
                            tier: node.tier,
                            parent_tier,
                        });
                    }
                    parent[idx] = Some(pidx);
                    children[pidx].push(idx);
                }
            }
        }

        Ok(Self {
            nodes: rows.into_iter().map(|(_, n)| n).collect(),
            by_id,
            by_name,
            parent,
            children,
            roots,
        })
    }

    /// Writes the taxonomy back out in the file format, rows in load order.
    pub fn export(&self) -> String {
        let mut out = HEADER.join("\t");
        out.push('\n');
        for node in &self.nodes {
            let parent = node.parent.as_ref().map_or("-", NodeId::as_str);
            out.push_str(&format!("{}\t{}\t{}\t{}\n", node.id, node.tier, parent, node.name));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[TaxonomyNode] {
        &self.nodes
    }

    pub fn node(&self, id: &NodeId) -> Option<&TaxonomyNode> {
        self.by_id.get(id).map(|&i| &self.nodes[i])
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn name_of(&self, id: &NodeId) -> Option<&str> {
        self.node(id).map(|n| n.name.as_str())
    }

    /// Tier-1 nodes, in file order.
    pub fn roots(&self) -> impl Iterator<Item = &TaxonomyNode> + '_ {
        self.roots.iter().map(move |&i| &self.nodes[i])
    }

    /// Direct children of `id`, in file order. Unknown ids have no children.
    pub fn children(&self, id: &NodeId) -> impl Iterator<Item = &TaxonomyNode> + '_ {
        let kids: &[usize] = match self.by_id.get(id) {
            Some(&i) => &self.children[i],
            None => &[],
        };
        kids.iter().map(move |&i| &self.nodes[i])
    }

    pub fn has_children(&self, id: &NodeId) -> bool {
        self.by_id
            .get(id)
            .is_some_and(|&i| !self.children[i].is_empty())
    }

    /// Looks a raw label up by normalized name.
    pub fn resolve(&self, raw: &str) -> Option<&NodeId> {
        self.by_name
            .get(&normalize_label(raw))
            .map(|&i| &self.nodes[i].id)
    }

    /// Accepts either an exact id or a (normalizable) name.
    pub fn resolve_id_or_name(&self, raw: &str) -> Option<&NodeId> {
        match self.by_id.get_key_value(&NodeId::new(raw.trim())) {
            Some((id, _)) => Some(id),
            None => self.resolve(raw),
        }
    }

    /// Parent chain of `id`, nearest first, excluding `id` itself.
    pub fn ancestors(&self, id: &NodeId) -> Result<Vec<&NodeId>, TaxonomyError> {
        let mut idx = self.index(id)?;
        let mut out = Vec::new();
        while let Some(p) = self.parent[idx] {
            out.push(&self.nodes[p].id);
            idx = p;
        }
        Ok(out)
    }

    /// True iff `a != b` and `a` lies on `b`'s parent chain.
    pub fn is_strict_ancestor(&self, a: &NodeId, b: &NodeId) -> Result<bool, TaxonomyError> {
        let ai = self.index(a)?;
        let mut cur = self.index(b)?;
        while let Some(p) = self.parent[cur] {
            if p == ai {
                return Ok(true);
            }
            cur = p;
        }
        Ok(false)
    }

    /// Removes every label that has a strict descendant in the same set.
    pub fn parent_exclusion(&self, set: &CategorySet) -> Result<CategorySet, TaxonomyError> {
        self.parent_exclusion_with(set, ExclusionScope::AnyDescendant)
    }

    pub fn parent_exclusion_with(
        &self,
        set: &CategorySet,
        scope: ExclusionScope,
    ) -> Result<CategorySet, TaxonomyError> {
        let present: HashSet<usize> = set
            .labels
            .iter()
            .map(|id| self.index(id))
            .collect::<Result<_, _>>()?;

        let mut covered = HashSet::new();
        for &idx in &present {
            let mut cur = idx;
            while let Some(p) = self.parent[cur] {
                covered.insert(p);
                if scope == ExclusionScope::DirectChild {
                    break;
                }
                cur = p;
            }
        }

        Ok(CategorySet {
            labels: set
                .labels
                .iter()
                .filter(|id| !covered.contains(&self.by_id[*id]))
                .cloned()
                .collect(),
            extras: set.extras.clone(),
        })
    }

    fn index(&self, id: &NodeId) -> Result<usize, TaxonomyError> {
        self.by_id
            .get(id)
            .copied()
            .ok_or_else(|| TaxonomyError::UnknownId(id.0.clone()))
    }
}

fn parse_row(row: usize, line: &str) -> Result<TaxonomyNode, TaxonomyError> {
    let malformed = |reason: String| TaxonomyError::MalformedRow { row, reason };
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 4 {
        return Err(malformed(format!("expected 4 tab-separated columns, got {}", cols.len())));
    }
    let id = cols[0].trim();
    if id.is_empty() {
        return Err(malformed("empty id".into()));
    }
    let tier: u8 = cols[1]
        .trim()
        .parse()
        .map_err(|_| malformed(format!("invalid tier `{}`", cols[1])))?;
    if !(1..=MAX_TIER).contains(&tier) {
        return Err(malformed(format!("tier {tier} outside 1..={MAX_TIER}")));
    }
    let parent = match cols[2].trim() {
        "-" | "" => None,
        p => Some(NodeId::new(p)),
    };
    match (tier, &parent) {
        (1, Some(_)) => return Err(malformed("tier-1 node has a parent".into())),
        (t, None) if t > 1 => return Err(malformed(format!("tier-{t} node has no parent"))),
        _ => {}
    }
    let name = cols[3].trim();
    if name.is_empty() {
        return Err(malformed("empty name".into()));
    }
    Ok(TaxonomyNode {
        id: NodeId::new(id),
        name: name.to_string(),
        tier,
        parent,
    })
}

/// A predicted or expert label set: resolved node ids plus the raw strings
/// that failed to resolve (hallucinations).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySet {
    pub labels: BTreeSet<NodeId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub extras: Vec<String>,
}

impl CategorySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels<I, T>(labels: I) -> Self
    where
        I: IntoIterator<Item = T>,
        T: Into<NodeId>,
    {
        Self {
            labels: labels.into_iter().map(Into::into).collect(),
            extras: Vec::new(),
        }
    }

    /// Builds a set, deduplicating extras by normalized form and dropping
    /// any extra that resolves (in `taxonomy`) to a label already present.
    pub fn with_extras<I, S>(labels: BTreeSet<NodeId>, extras: I, taxonomy: &Taxonomy) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut set = Self {
            labels,
            extras: Vec::new(),
        };
        for e in extras {
            set.push_extra(e.into(), taxonomy);
        }
        set
    }

    pub fn push_extra(&mut self, raw: String, taxonomy: &Taxonomy) {
        if taxonomy.resolve(&raw).is_some_and(|id| self.labels.contains(id)) {
            return;
        }
        let norm = normalize_label(&raw);
        if norm.is_empty() || self.extras.iter().any(|e| normalize_label(e) == norm) {
            return;
        }
        self.extras.push(raw);
    }

    /// Cluster size: every emitted category, hallucinated or not.
    pub fn len(&self) -> usize {
        self.labels.len() + self.extras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty() && self.extras.is_empty()
    }

    /// The same set with hallucinations filtered out.
    pub fn filtered(&self) -> CategorySet {
        CategorySet::from_labels(self.labels.iter().cloned())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const TOY: &str = "\
id\ttier\tparent_id\tname
# toy taxonomy
1\t1\t-\tSports
2\t2\t1\tBasketball
3\t3\t2\tNBA
4\t2\t1\tSoccer
5\t1\t-\tTravel
6\t2\t5\tAir Travel
";

    pub(crate) fn toy() -> Taxonomy {
        Taxonomy::load(TOY.as_bytes()).unwrap()
    }

    fn id(s: &str) -> NodeId {
        NodeId::new(s)
    }

    #[test]
    fn minimal_forest() {
        let t = Taxonomy::load("id\ttier\tparent_id\tname\nA\t1\t-\tRoot\nB\t2\tA\tLeft\nC\t2\tA\tRight\n".as_bytes())
            .unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.roots().count(), 1);
        assert_eq!(t.children(&id("A")).count(), 2);
    }

    #[test]
    fn dangling_parent_names_row() {
        let err = Taxonomy::load("id\ttier\tparent_id\tname\nA\t1\t-\tRoot\nB\t2\tZ\tLeft\n".as_bytes())
            .unwrap_err();
        assert_eq!(
            err,
            TaxonomyError::DanglingParent {
                row: 3,
                parent: "Z".into()
            }
        );
    }

    #[test]
    fn load_errors() {
        let h = "id\ttier\tparent_id\tname\n";
        let dup = format!("{h}A\t1\t-\tRoot\nA\t1\t-\tOther\n");
        assert!(matches!(
            Taxonomy::load(dup.as_bytes()),
            Err(TaxonomyError::DuplicateId { row: 3, .. })
        ));
        let jump = format!("{h}A\t1\t-\tRoot\nB\t3\tA\tDeep\n");
        assert!(matches!(
            Taxonomy::load(jump.as_bytes()),
            Err(TaxonomyError::TierDiscontinuity { row: 3, tier: 3, parent_tier: 1 })
        ));
        let short = format!("{h}A\t1\tRoot\n");
        assert!(matches!(
            Taxonomy::load(short.as_bytes()),
            Err(TaxonomyError::MalformedRow { row: 2, .. })
        ));
        let same_name = format!("{h}A\t1\t-\tSports\nB\t1\t-\t  SPORTS\n");
        assert!(matches!(
            Taxonomy::load(same_name.as_bytes()),
            Err(TaxonomyError::DuplicateName { row: 3, .. })
        ));
        assert_eq!(
            Taxonomy::load("A\t1\t-\tRoot\n".as_bytes()).unwrap_err(),
            TaxonomyError::MissingHeader
        );
        let rooted_child = format!("{h}A\t2\t-\tRoot\n");
        assert!(matches!(
            Taxonomy::load(rooted_child.as_bytes()),
            Err(TaxonomyError::MalformedRow { row: 2, .. })
        ));
    }

    #[test]
    fn forward_parent_references_are_allowed() {
        let t = Taxonomy::load("id\ttier\tparent_id\tname\nB\t2\tA\tLeft\nA\t1\t-\tRoot\n".as_bytes())
            .unwrap();
        assert!(t.is_strict_ancestor(&id("A"), &id("B")).unwrap());
    }

    #[test]
    fn export_round_trips_row_set() {
        let t = toy();
        let again = Taxonomy::load(t.export().as_bytes()).unwrap();
        assert_eq!(t.nodes(), again.nodes());
        let rows = |s: &str| -> BTreeSet<String> {
            s.lines()
                .filter(|l| !l.starts_with('#') && !l.starts_with("id\t"))
                .map(str::to_string)
                .collect()
        };
        assert_eq!(rows(TOY), rows(&t.export()));
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_label("  Sports "), "sports");
        assert_eq!(normalize_label("sports"), "sports");
        assert_eq!(normalize_label("Video   Gaming"), "video gaming");
        assert_eq!(normalize_label("\tAir\n Travel "), "air travel");
    }

    #[test]
    fn resolve_examples() {
        let t = toy();
        assert_eq!(t.resolve("Sports"), Some(&id("1")));
        assert_eq!(t.resolve("Quantum Sports"), None);
        // oracle: linear scan over stored names
        let raw = "  sPoRtS  ";
        let scanned = t
            .nodes()
            .iter()
            .find(|n| n.name.trim().eq_ignore_ascii_case(raw.trim()))
            .map(|n| &n.id);
        assert_eq!(t.resolve(raw), scanned);
        assert_eq!(t.resolve(raw), Some(&id("1")));
        assert_eq!(t.resolve_id_or_name("3"), Some(&id("3")));
        assert_eq!(t.resolve_id_or_name("air travel"), Some(&id("6")));
    }

    #[test]
    fn ancestry() {
        let t = toy();
        assert!(t.is_strict_ancestor(&id("1"), &id("3")).unwrap());
        assert!(!t.is_strict_ancestor(&id("3"), &id("3")).unwrap());
        assert!(!t.is_strict_ancestor(&id("2"), &id("4")).unwrap());
        assert!(!t.is_strict_ancestor(&id("3"), &id("1")).unwrap());
        assert_eq!(
            t.is_strict_ancestor(&id("1"), &id("99")),
            Err(TaxonomyError::UnknownId("99".into()))
        );
        assert_eq!(t.ancestors(&id("3")).unwrap(), vec![&id("2"), &id("1")]);
    }

    #[test]
    fn forest_depth_bounded() {
        let t = toy();
        for n in t.nodes() {
            let chain = t.ancestors(&n.id).unwrap();
            assert!(chain.len() <= 3);
            let top = chain.last().map_or(&n.id, |v| *v);
            assert_eq!(t.node(top).unwrap().tier, 1);
        }
    }

    #[test]
    fn parent_exclusion_examples() {
        let t = toy();
        let per = |ids: &[&str]| {
            t.parent_exclusion(&CategorySet::from_labels(ids.iter().copied()))
                .unwrap()
                .labels
        };
        assert_eq!(per(&["1", "2"]), CategorySet::from_labels(["2"]).labels);
        assert_eq!(per(&["2", "5"]), CategorySet::from_labels(["2", "5"]).labels);
        assert_eq!(per(&["1", "2", "3"]), CategorySet::from_labels(["3"]).labels);
        // tier-1 with tier-3 descendant only
        assert_eq!(per(&["1", "3"]), CategorySet::from_labels(["3"]).labels);
    }

    #[test]
    fn direct_child_scope_keeps_grandparents() {
        let t = toy();
        let set = CategorySet::from_labels(["1", "3"]);
        let out = t.parent_exclusion_with(&set, ExclusionScope::DirectChild).unwrap();
        assert_eq!(out.labels, set.labels);
    }

    #[test]
    fn parent_exclusion_keeps_extras_and_rejects_unknown() {
        let t = toy();
        let mut set = CategorySet::from_labels(["1", "2"]);
        set.extras.push("Zebra".into());
        assert_eq!(t.parent_exclusion(&set).unwrap().extras, vec!["Zebra".to_string()]);
        let bad = CategorySet::from_labels(["nope"]);
        assert!(t.parent_exclusion(&bad).is_err());
    }

    #[test]
    fn extras_dedup_and_disjoint() {
        let t = toy();
        let labels = CategorySet::from_labels(["1"]).labels;
        let set = CategorySet::with_extras(labels, ["Zebra", " zebra ", "sports", "Lion"], &t);
        assert_eq!(set.extras, vec!["Zebra".to_string(), "Lion".to_string()]);
    }

    proptest! {
        #[test]
        fn normalize_idempotent(s in "\\PC{0,24}") {
            let once = normalize_label(&s);
            prop_assert_eq!(normalize_label(&once), once);
        }

        #[test]
        fn resolve_own_name(i in 0usize..6, pad in "[ \t]{0,3}") {
            let t = toy();
            let n = &t.nodes()[i];
            let raw = format!("{pad}{}{pad}", n.name.to_uppercase());
            prop_assert_eq!(t.resolve(&raw), Some(&n.id));
        }

        #[test]
        fn per_shrinks_and_is_idempotent(mask in 0u32..64) {
            let t = toy();
            let set = CategorySet::from_labels(
                t.nodes().iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, n)| n.id.clone()),
            );
            let once = t.parent_exclusion(&set).unwrap();
            prop_assert!(once.labels.is_subset(&set.labels));
            prop_assert_eq!(t.parent_exclusion(&once).unwrap(), once);
        }
    }
}
