use std::collections::{BTreeSet, VecDeque};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::parse::parse_response;
use super::template::{render_prompt, Prompt, PromptTemplate};
use super::DecodingParams;
use crate::metrics::TokenUsage;
use crate::providers::{Provider, ProviderError};
use crate::taxonomy::{CategorySet, NodeId, Taxonomy};

/// Which accepted categories get a follow-up prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FanOut {
    /// Every accepted category is refined.
    #[default]
    All,
    /// Only the first accepted category of each reply is refined.
    FirstOnly,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescentOptions {
    pub fan_out: FanOut,
    /// Treat categories that exist in the taxonomy but were not offered as
    /// valid (terminal) labels instead of hallucinations.
    #[serde(default)]
    pub accept_unoffered: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescentStep {
    pub tier: u8,
    /// The accepted category being refined; `None` for the tier-1 step.
    pub parent: Option<NodeId>,
    pub offered: Vec<NodeId>,
    pub raw_response: String,
    pub accepted: Vec<NodeId>,
    pub extras: Vec<String>,
    pub none_flag: bool,
    pub usage: Option<TokenUsage>,
    pub attempts: u32,
    #[serde(with = "millis")]
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescentTrace {
    pub steps: Vec<DescentStep>,
    pub terminal_labels: CategorySet,
}

impl DescentTrace {
    /// Summed usage over all steps, and whether every step reported usage.
    pub fn usage(&self) -> (TokenUsage, bool) {
        let total = self.steps.iter().filter_map(|s| s.usage).sum();
        let complete = self.steps.iter().all(|s| s.usage.is_some());
        (total, complete)
    }

    /// Re-parses every recorded reply against its offered list and rebuilds
    /// the terminal labels, without re-querying anything.
    pub fn reparse(&self, taxonomy: &Taxonomy, options: DescentOptions) -> DescentTrace {
        let steps: Vec<DescentStep> = self
            .steps
            .iter()
            .map(|s| {
                let parsed = parse_response(&s.raw_response, taxonomy, &s.offered);
                DescentStep {
                    accepted: parsed.accepted,
                    extras: parsed.extras,
                    none_flag: parsed.none_flag,
                    ..s.clone()
                }
            })
            .collect();
        let terminal_labels = terminal_labels(&steps, taxonomy, options);
        DescentTrace {
            steps,
            terminal_labels,
        }
    }
}

/// Runs the tier-by-tier dialogue for one document.
///
/// Steps are issued breadth-first: the tier-1 step, then one step per
/// accepted category that has children, offering exactly those children.
pub fn categorize_descent(
    text: &str,
    taxonomy: &Taxonomy,
    provider: &dyn Provider,
    template: &PromptTemplate,
    params: &DecodingParams,
    options: DescentOptions,
) -> Result<DescentTrace, ProviderError> {
    let mut queue: VecDeque<(u8, Option<NodeId>, Vec<NodeId>)> = VecDeque::new();
    let roots: Vec<NodeId> = taxonomy.roots().map(|n| n.id.clone()).collect();
    if !roots.is_empty() {
        queue.push_back((1, None, roots));
    }

    let mut steps = Vec::new();
    while let Some((tier, parent, offered)) = queue.pop_front() {
        let names: Vec<&str> = offered.iter().filter_map(|id| taxonomy.name_of(id)).collect();
        let instructions =
            render_prompt(template, &names).expect("offered list is never empty");
        let result = provider.complete(&Prompt::new(instructions, text), params)?;
        let parsed = parse_response(&result.text, taxonomy, &offered);

        let refine: Box<dyn Iterator<Item = &NodeId>> = match options.fan_out {
            FanOut::All => Box::new(parsed.accepted.iter()),
            FanOut::FirstOnly => Box::new(parsed.accepted.iter().take(1)),
        };
        for id in refine {
            let kids: Vec<NodeId> = taxonomy.children(id).map(|n| n.id.clone()).collect();
            if !kids.is_empty() {
                queue.push_back((tier + 1, Some(id.clone()), kids));
            }
        }

        steps.push(DescentStep {
            tier,
            parent,
            offered,
            raw_response: result.text,
            accepted: parsed.accepted,
            extras: parsed.extras,
            none_flag: parsed.none_flag,
            usage: result.usage,
            attempts: result.attempt_count,
            latency: result.latency,
        });
    }

    let terminal_labels = terminal_labels(&steps, taxonomy, options);
    Ok(DescentTrace {
        steps,
        terminal_labels,
    })
}

/// Deepest accepted categories plus every hallucination seen along the way.
fn terminal_labels(steps: &[DescentStep], taxonomy: &Taxonomy, options: DescentOptions) -> CategorySet {
    let accepted: BTreeSet<NodeId> = steps.iter().flat_map(|s| s.accepted.iter().cloned()).collect();
    let mut labels: BTreeSet<NodeId> = accepted
        .iter()
        .filter(|id| !taxonomy.children(id).any(|c| accepted.contains(&c.id)))
        .cloned()
        .collect();

    let mut extras = Vec::new();
    for raw in steps.iter().flat_map(|s| s.extras.iter()) {
        match taxonomy.resolve(raw) {
            Some(id) if options.accept_unoffered => {
                labels.insert(id.clone());
            }
            _ => extras.push(raw.clone()),
        }
    }
    CategorySet::with_extras(labels, extras, taxonomy)
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{mock_provider, MockScript, ScriptedReply};
    use crate::taxonomy::tests::toy;
    use proptest::prelude::*;

    fn id(s: &str) -> NodeId {
        NodeId::new(s)
    }

    fn run(script: MockScript, text: &str, options: DescentOptions) -> DescentTrace {
        let t = toy();
        let m = mock_provider(script);
        categorize_descent(text, &t, &m, &PromptTemplate::default(), &DecodingParams::default(), options)
            .unwrap()
    }

    fn step(script: &mut MockScript, text: &str, offered: &[&str], reply: &str) {
        script
            .insert_request(&PromptTemplate::default(), text, offered, ScriptedReply::new(reply, None))
            .unwrap();
    }

    #[test]
    fn immediate_abstention() {
        let trace = run(MockScript::default(), "doc", DescentOptions::default());
        assert_eq!(trace.steps.len(), 1);
        assert!(trace.steps[0].none_flag);
        assert_eq!(trace.steps[0].offered, vec![id("1"), id("5")]);
        assert!(trace.terminal_labels.is_empty());
    }

    #[test]
    fn refines_down_then_stops_on_none() {
        let mut s = MockScript::default();
        step(&mut s, "doc", &["Sports", "Travel"], "Sports");
        step(&mut s, "doc", &["Basketball", "Soccer"], "Basketball");
        step(&mut s, "doc", &["NBA"], "None");
        let trace = run(s, "doc", DescentOptions::default());
        assert_eq!(trace.steps.len(), 3);
        assert_eq!(
            trace.steps.iter().map(|s| s.tier).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        assert_eq!(trace.steps[2].parent, Some(id("2")));
        assert_eq!(trace.terminal_labels, CategorySet::from_labels(["2"]));
    }

    #[test]
    fn fans_out_per_accepted_branch() {
        let mut s = MockScript::default();
        step(&mut s, "doc", &["Sports", "Travel"], "Sports, Travel");
        step(&mut s, "doc", &["Basketball", "Soccer"], "Soccer");
        step(&mut s, "doc", &["Air Travel"], "Air Travel");
        let trace = run(s.clone(), "doc", DescentOptions::default());
        let tier2: Vec<_> = trace.steps.iter().filter(|s| s.tier == 2).collect();
        assert_eq!(tier2.len(), 2);
        assert_eq!(tier2[0].parent, Some(id("1")));
        assert_eq!(tier2[1].parent, Some(id("5")));
        assert_eq!(trace.terminal_labels, CategorySet::from_labels(["4", "6"]));

        let single = run(
            s,
            "doc",
            DescentOptions {
                fan_out: FanOut::FirstOnly,
                ..Default::default()
            },
        );
        assert_eq!(single.steps.len(), 2);
        assert_eq!(single.terminal_labels, CategorySet::from_labels(["4", "5"]));
    }

    #[test]
    fn hallucinations_collected_and_unoffered_flag() {
        let mut s = MockScript::default();
        step(&mut s, "doc", &["Sports", "Travel"], "Sports, Quantum Zoology");
        step(&mut s, "doc", &["Basketball", "Soccer"], "Soccer, Air Travel");
        let trace = run(s.clone(), "doc", DescentOptions::default());
        assert_eq!(trace.terminal_labels.labels, CategorySet::from_labels(["4"]).labels);
        assert_eq!(
            trace.terminal_labels.extras,
            vec!["Quantum Zoology".to_string(), "Air Travel".to_string()]
        );

        let lenient = run(
            s,
            "doc",
            DescentOptions {
                accept_unoffered: true,
                ..Default::default()
            },
        );
        assert_eq!(lenient.terminal_labels.labels, CategorySet::from_labels(["4", "6"]).labels);
        assert_eq!(lenient.terminal_labels.extras, vec!["Quantum Zoology".to_string()]);
    }

    #[test]
    fn reparse_matches_original() {
        let mut s = MockScript::default();
        step(&mut s, "doc", &["Sports", "Travel"], "Sports, Travel, Zebra");
        step(&mut s, "doc", &["Basketball", "Soccer"], "Basketball");
        let trace = run(s, "doc", DescentOptions::default());
        assert_eq!(trace.reparse(&toy(), DescentOptions::default()), trace);
    }

    #[test]
    fn usage_totals() {
        let mut s = MockScript::default();
        s.insert_request(
            &PromptTemplate::default(),
            "doc",
            &["Sports", "Travel"],
            ScriptedReply::new("Travel", Some(TokenUsage::new(100, 2))),
        )
        .unwrap();
        let s = s.with_default(ScriptedReply::new("None", Some(TokenUsage::new(50, 1))));
        let trace = run(s, "doc", DescentOptions::default());
        assert_eq!(trace.usage(), (TokenUsage::new(150, 3), true));
    }

    proptest! {
        #[test]
        fn descent_is_sound(mask in 0u32..64, fan_first in any::<bool>()) {
            let t = toy();
            // random replies: each offered node accepted iff its bit is set
            let mut s = MockScript::default();
            let mut frontier = vec![t.roots().map(|n| n.id.clone()).collect::<Vec<_>>()];
            while let Some(offered) = frontier.pop() {
                let picked: Vec<&NodeId> = offered.iter()
                    .filter(|id| mask & (1 << (id.as_str().parse::<u32>().unwrap() - 1)) != 0)
                    .collect();
                let names: Vec<&str> = offered.iter().map(|i| t.name_of(i).unwrap()).collect();
                let reply: Vec<&str> = picked.iter().map(|i| t.name_of(i).unwrap()).collect();
                let reply = if reply.is_empty() { "None".to_string() } else { reply.join(", ") };
                s.insert_request(&PromptTemplate::default(), "doc", &names, ScriptedReply::new(reply, None)).unwrap();
                for p in picked {
                    let kids: Vec<NodeId> = t.children(p).map(|n| n.id.clone()).collect();
                    if !kids.is_empty() { frontier.push(kids); }
                }
            }
            let opts = DescentOptions { fan_out: if fan_first { FanOut::FirstOnly } else { FanOut::All }, ..Default::default() };
            let trace = run(s.clone(), "doc", opts);
            prop_assert_eq!(&trace, &run(s, "doc", opts));

            let first: BTreeSet<&NodeId> = trace.steps[0].accepted.iter().collect();
            for label in &trace.terminal_labels.labels {
                let chain = t.ancestors(label).unwrap();
                let root = chain.last().copied().unwrap_or(label);
                prop_assert!(first.contains(root));
            }
            let mut last_tier = 0;
            for st in &trace.steps {
                prop_assert!(st.tier >= last_tier);
                last_tier = st.tier;
                if let Some(p) = &st.parent {
                    let prev_accepted = trace.steps.iter()
                        .filter(|o| o.tier + 1 == st.tier)
                        .any(|o| o.accepted.contains(p));
                    prop_assert!(prev_accepted);
                    for o in &st.offered {
                        prop_assert_eq!(t.node(o).unwrap().parent.as_ref(), Some(p));
                    }
                }
                for a in &st.accepted {
                    prop_assert!(st.offered.contains(a));
                }
            }
        }
    }
}
