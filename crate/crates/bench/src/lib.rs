//! Synthetic inputs for the benchmarks.

use taxocat::{CategorySet, NodeId, Taxonomy};

/// A four-tier taxonomy of `roots * (1 + f + f^2 + f^3)` nodes.
pub fn synthetic_taxonomy(roots: usize, fanout: usize) -> Taxonomy {
    let mut tsv = String::from("id\ttier\tparent_id\tname\n");
    let mut next = 0usize;
    let mut frontier: Vec<Option<usize>> = vec![None; roots];
    for tier in 1..=4 {
        let mut below = Vec::new();
        for parent in frontier {
            next += 1;
            let p = parent.map_or("-".to_string(), |p| p.to_string());
            tsv.push_str(&format!("{next}\t{tier}\t{p}\tCategory {next}\n"));
            if tier < 4 {
                below.extend(std::iter::repeat_n(Some(next), fanout));
            }
        }
        frontier = below;
    }
    Taxonomy::load(tsv.as_bytes()).expect("synthetic taxonomy is well formed")
}

/// Every `stride`-th node, as a label set.
pub fn strided_set(taxonomy: &Taxonomy, stride: usize, offset: usize) -> CategorySet {
    CategorySet::from_labels(
        taxonomy
            .nodes()
            .iter()
            .skip(offset)
            .step_by(stride)
            .map(|n| n.id.clone())
            .collect::<Vec<NodeId>>(),
    )
}
