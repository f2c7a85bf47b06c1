use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc};

use rust_decimal::Decimal;

use super::corpus::{Corpus, Sample};
use super::record::{MemberOutcome, RunKind, RunManifest, RunRecord, RunStore, SampleOutcome, SampleRecord};
use super::HarnessError;
use crate::ensemble::{combine_votes, EnsembleConfig};
use crate::metrics::{sample_cost, HallucinationPolicy, PricingModel, SampleMetrics};
use crate::prompting::{categorize_descent, DecodingParams, DescentOptions, PromptTemplate};
use crate::providers::{Provider, ProviderKind, ProviderProfile};
use crate::taxonomy::{CategorySet, Taxonomy};

pub const DEFAULT_CONCURRENCY: usize = 8;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: DecodingParams,
    pub policy: HallucinationPolicy,
    pub descent: DescentOptions,
    pub template: PromptTemplate,
    /// Samples in flight at once.
    pub concurrency: usize,
    /// Count costs of samples with incomplete usage in the total.
    pub include_estimated_cost: bool,
    pub label: Option<String>,
    /// Process at most this many not-yet-finished samples, then stop.
    pub limit: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: DecodingParams::default(),
            policy: HallucinationPolicy::default(),
            descent: DescentOptions::default(),
            template: PromptTemplate::default(),
            concurrency: DEFAULT_CONCURRENCY,
            include_estimated_cost: false,
            label: None,
            limit: None,
        }
    }
}

fn pricing_for(profile: &ProviderProfile) -> Result<PricingModel, HarnessError> {
    match (profile.pricing, profile.kind) {
        (Some(p), _) => Ok(p),
        (None, ProviderKind::Mock) => Ok(PricingModel::new(Decimal::ZERO, Decimal::ZERO)),
        (None, _) => Err(HarnessError::MissingPricing(profile.name.clone())),
    }
}

fn manifest(
    kind: RunKind,
    label: String,
    corpus: &Corpus,
    config: &RunConfig,
    pricing: BTreeMap<String, PricingModel>,
) -> RunManifest {
    let mut m = RunManifest {
        run_id: String::new(),
        label,
        kind,
        params: config.params,
        policy: config.policy,
        descent: config.descent,
        template_fingerprint: config.template.fingerprint(),
        corpus_fingerprint: corpus.fingerprint(),
        sample_count: corpus.len(),
        pricing,
        include_estimated_cost: config.include_estimated_cost,
    };
    m.run_id = m.derive_id();
    m
}

fn run_member(
    provider: &dyn Provider,
    sample: &Sample,
    taxonomy: &Taxonomy,
    config: &RunConfig,
    pricing: &PricingModel,
) -> MemberOutcome {
    match categorize_descent(
        &sample.text,
        taxonomy,
        provider,
        &config.template,
        &config.params,
        config.descent,
    ) {
        Ok(trace) => {
            let (usage, usage_complete) = trace.usage();
            MemberOutcome {
                member: provider.name().to_string(),
                cost: sample_cost(usage, pricing),
                trace: Some(trace),
                error: None,
                usage,
                usage_complete,
            }
        }
        Err(e) => {
            tracing::warn!(sample = %sample.id, provider = provider.name(), error = %e, "sample failed");
            MemberOutcome {
                member: provider.name().to_string(),
                trace: None,
                error: Some(e.to_string()),
                usage: Default::default(),
                usage_complete: false,
                cost: Decimal::ZERO,
            }
        }
    }
}

/// Combines member outcomes into a scored (or failed) sample row.
fn score_members(
    index: usize,
    sample_id: &str,
    expert: &CategorySet,
    members: Vec<MemberOutcome>,
    kind: &RunKind,
    policy: HallucinationPolicy,
    taxonomy: &Taxonomy,
) -> Result<SampleRecord, HarnessError> {
    let failed = |error: String, members: Vec<MemberOutcome>| SampleRecord {
        index,
        sample_id: sample_id.to_string(),
        expert: expert.clone(),
        members,
        outcome: SampleOutcome::Failed { error },
    };
    if members.iter().all(|m| m.trace.is_none()) {
        let error = members
            .iter()
            .filter_map(|m| m.error.as_ref().map(|e| format!("{}: {e}", m.member)))
            .collect::<Vec<_>>()
            .join("; ");
        return Ok(failed(error, members));
    }

    let predicted = match kind {
        RunKind::Single { .. } => members[0]
            .trace
            .as_ref()
            .map(|t| t.terminal_labels.clone())
            .unwrap_or_default(),
        RunKind::Ensemble {
            members: names,
            rule,
            tie_break,
        } => {
            let votes: Vec<CategorySet> = members
                .iter()
                .map(|m| m.trace.as_ref().map(|t| t.terminal_labels.clone()).unwrap_or_default())
                .collect();
            combine_votes(&votes, names.len(), *rule, *tie_break, taxonomy)?
        }
    };
    let cost = members.iter().map(|m| m.cost).sum::<Decimal>().normalize();
    let mut metrics = SampleMetrics::score(&predicted, expert, taxonomy, policy, cost)?;
    metrics.cost_estimated = members
        .iter()
        .any(|m| m.trace.is_some() && !m.usage_complete);
    Ok(SampleRecord {
        index,
        sample_id: sample_id.to_string(),
        expert: expert.clone(),
        members,
        outcome: SampleOutcome::Scored { predicted, metrics },
    })
}

/// Runs `work` over every unfinished sample with bounded concurrency,
/// persisting each row as it completes.
fn execute<F>(
    corpus: &Corpus,
    manifest: RunManifest,
    config: &RunConfig,
    store: Option<&RunStore>,
    work: F,
) -> Result<RunRecord, HarnessError>
where
    F: Fn(usize, &Sample) -> Result<SampleRecord, HarnessError> + Sync,
{
    let mut done: HashMap<String, SampleRecord> = HashMap::new();
    let mut appender = None;
    if let Some(store) = store {
        store.open(&manifest)?;
        for rec in store.load_samples()? {
            done.insert(rec.sample_id.clone(), rec);
        }
        appender = Some(store.appender()?);
    }

    let pending: Vec<(usize, &Sample)> = corpus
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| done.get(&s.id).is_none_or(SampleRecord::is_failed))
        .take(config.limit.unwrap_or(usize::MAX))
        .collect();
    let workers = config.concurrency.clamp(1, pending.len().max(1));
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let mut first_error = None;

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let tx = tx.clone();
            let (pending, next, stop, work) = (&pending, &next, &stop, &work);
            scope.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= pending.len() || stop.load(Ordering::SeqCst) {
                    break;
                }
                let (index, sample) = pending[i];
                if tx.send(work(index, sample)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for result in rx {
            let persisted = result.and_then(|rec| {
                if let Some(a) = appender.as_mut() {
                    a.append(&rec)?;
                }
                Ok(rec)
            });
            match persisted {
                Ok(rec) => {
                    done.insert(rec.sample_id.clone(), rec);
                }
                Err(e) => {
                    stop.store(true, Ordering::SeqCst);
                    first_error.get_or_insert(e);
                }
            }
        }
    });
    if let Some(e) = first_error {
        return Err(e);
    }

    let samples = corpus
        .samples
        .iter()
        .filter_map(|s| done.remove(&s.id))
        .collect();
    RunRecord::from_samples(manifest, samples)
}

/// Categorizes and scores every sample of `corpus` with one provider.
///
/// With a store, rows are appended as they finish and an existing run
/// directory for the same run is resumed: finished samples are not re-queried.
pub fn run_evaluation(
    corpus: &Corpus,
    taxonomy: &Taxonomy,
    provider: &dyn Provider,
    config: &RunConfig,
    store: Option<&RunStore>,
) -> Result<RunRecord, HarnessError> {
    let profile = provider.profile();
    profile.validate_params(&config.params)?;
    let pricing = pricing_for(profile)?;
    let kind = RunKind::Single {
        provider: profile.name.clone(),
    };
    let label = config.label.clone().unwrap_or_else(|| profile.name.clone());
    let m = manifest(
        kind.clone(),
        label,
        corpus,
        config,
        BTreeMap::from([(profile.name.clone(), pricing)]),
    );
    execute(corpus, m, config, store, |index, sample| {
        let outcome = run_member(provider, sample, taxonomy, config, &pricing);
        score_members(index, &sample.id, &sample.expert_labels, vec![outcome], &kind, config.policy, taxonomy)
    })
}

/// Runs every member's descent per sample, concurrently, and scores the
/// combined vote. Cost is the sum of member costs. A member failing on a
/// sample simply casts no votes there.
pub fn run_ensemble_evaluation(
    corpus: &Corpus,
    taxonomy: &Taxonomy,
    members: &[Arc<dyn Provider>],
    ensemble: &EnsembleConfig,
    config: &RunConfig,
    store: Option<&RunStore>,
) -> Result<RunRecord, HarnessError> {
    let names: Vec<String> = ensemble.members().iter().map(|p| p.name.clone()).collect();
    let provider_names: Vec<String> = members.iter().map(|p| p.name().to_string()).collect();
    if names != provider_names {
        return Err(HarnessError::Config(format!(
            "ensemble members {names:?} do not match providers {provider_names:?}"
        )));
    }
    let mut pricing = BTreeMap::new();
    for p in members {
        p.profile().validate_params(&config.params)?;
        pricing.insert(p.name().to_string(), pricing_for(p.profile())?);
    }
    let kind = RunKind::Ensemble {
        members: names.clone(),
        rule: ensemble.rule(),
        tie_break: ensemble.tie_break(),
    };
    let label = config
        .label
        .clone()
        .unwrap_or_else(|| format!("ensemble[{}] {}", names.join("+"), ensemble.rule()));
    let m = manifest(kind.clone(), label, corpus, config, pricing.clone());

    execute(corpus, m, config, store, |index, sample| {
        let outcomes: Vec<MemberOutcome> = std::thread::scope(|scope| {
            let handles: Vec<_> = members
                .iter()
                .map(|p| {
                    let price = &pricing[p.name()];
                    scope.spawn(move || run_member(p.as_ref(), sample, taxonomy, config, price))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("member thread")).collect()
        });
        score_members(index, &sample.id, &sample.expert_labels, outcomes, &kind, config.policy, taxonomy)
    })
}

/// Re-scores a persisted run from its recorded replies, without querying any
/// provider: traces are re-parsed against `taxonomy`, member costs recomputed
/// from the recorded pricing, and metrics recomputed under `policy` (the
/// run's own policy when `None`).
pub fn rescore(
    store: &RunStore,
    taxonomy: &Taxonomy,
    policy: Option<HallucinationPolicy>,
) -> Result<RunRecord, HarnessError> {
    let mut manifest = store
        .read_manifest()?
        .ok_or_else(|| HarnessError::Persist(format!("{}: not a run directory", store.dir().display())))?;
    if let Some(p) = policy {
        manifest.policy = p;
    }
    manifest.run_id = manifest.derive_id();

    let mut rows = Vec::new();
    for rec in store.load_samples()? {
        let members = rec
            .members
            .into_iter()
            .map(|mut m| {
                if let Some(trace) = &m.trace {
                    let trace = trace.reparse(taxonomy, manifest.descent);
                    let (usage, complete) = trace.usage();
                    if let Some(price) = manifest.pricing.get(&m.member) {
                        m.cost = sample_cost(usage, price);
                    }
                    m.usage = usage;
                    m.usage_complete = complete;
                    m.trace = Some(trace);
                }
                m
            })
            .collect();
        rows.push(score_members(
            rec.index,
            &rec.sample_id,
            &rec.expert,
            members,
            &manifest.kind,
            manifest.policy,
            taxonomy,
        )?);
    }
    RunRecord::from_samples(manifest, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{TieBreak, VoteRule};
    use crate::harness::corpus::ingest_corpus;
    use crate::metrics::{MacroValue, TokenUsage};
    use crate::prompting::Prompt;
    use crate::providers::mock::{MockProvider, MockScript, ScriptedReply};
    use crate::providers::{CompletionResult, ProviderError};
    use crate::taxonomy::tests::toy;
    use crate::taxonomy::NodeId;
    use std::sync::atomic::AtomicU64;

    const CORPUS: &str = r#"{"id":"a","text":"lakers win","expert_labels":["NBA"]}
{"id":"b","text":"cheap flights","expert_labels":["Air Travel"]}
{"id":"c","text":"world cup","expert_labels":["Soccer"]}
{"id":"d","text":"court and pitch","expert_labels":["Basketball","Soccer"]}
{"id":"e","text":"fly to the game","expert_labels":["NBA","Air Travel"]}
"#;

    fn corpus() -> Corpus {
        ingest_corpus(CORPUS.as_bytes(), &toy()).unwrap()
    }

    fn echo_script(corpus: &Corpus) -> MockScript {
        let t = toy();
        let mut s = MockScript::default();
        for sample in &corpus.samples {
            let labels: Vec<NodeId> = sample.expert_labels.labels.iter().cloned().collect();
            s.insert_descent(&t, &PromptTemplate::default(), &sample.text, &labels, Some(TokenUsage::new(10, 2)))
                .unwrap();
        }
        s
    }

    struct Counting<P> {
        inner: P,
        calls: AtomicU64,
    }

    impl<P: Provider> Provider for Counting<P> {
        fn profile(&self) -> &ProviderProfile {
            self.inner.profile()
        }
        fn complete(&self, p: &Prompt, d: &DecodingParams) -> Result<CompletionResult, ProviderError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.complete(p, d)
        }
    }

    struct Down(ProviderProfile);

    impl Provider for Down {
        fn profile(&self) -> &ProviderProfile {
            &self.0
        }
        fn complete(&self, _: &Prompt, _: &DecodingParams) -> Result<CompletionResult, ProviderError> {
            Err(ProviderError::Transport {
                attempts: 3,
                message: "unreachable".into(),
            })
        }
    }

    #[test]
    fn perfect_echo_scores_one() {
        let c = corpus();
        let p = MockProvider::new(ProviderProfile::mock("echo"), echo_script(&c));
        let rec = run_evaluation(&c, &toy(), &p, &RunConfig::default(), None).unwrap();
        let r = rec.report.unwrap();
        let one = MacroValue::from_ratio(1, 1);
        assert_eq!((r.f1.clone(), r.accuracy.clone(), r.precision, r.recall), (one.clone(), one.clone(), one.clone(), one));
        assert_eq!(r.hallucination_ratio, MacroValue::from_ratio(0, 1));
        assert_eq!(r.total_cost, Decimal::ZERO);
        assert_eq!(rec.failures, 0);
        let ids: Vec<_> = rec.samples.iter().map(|s| s.sample_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c", "d", "e"]);
    }

    #[test]
    fn all_none_scores_zero() {
        let c = corpus();
        let p = MockProvider::new(ProviderProfile::mock("silent"), MockScript::default());
        let r = run_evaluation(&c, &toy(), &p, &RunConfig::default(), None).unwrap().report.unwrap();
        assert_eq!(r.recall, MacroValue::from_ratio(0, 1));
        assert_eq!(r.f1, MacroValue::from_ratio(0, 1));
        assert_eq!(r.hallucination_ratio, MacroValue::from_ratio(0, 1));
        assert_eq!(r.mean_cluster_size, MacroValue::from_ratio(0, 1));
    }

    #[test]
    fn concurrency_does_not_change_results() {
        let c = corpus();
        let p = MockProvider::new(ProviderProfile::mock("echo"), echo_script(&c));
        let serial = RunConfig {
            concurrency: 1,
            ..RunConfig::default()
        };
        let a = run_evaluation(&c, &toy(), &p, &serial, None).unwrap();
        let b = run_evaluation(&c, &toy(), &p, &RunConfig::default(), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resume_skips_finished_samples() {
        let c = corpus();
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let p = Counting {
            inner: MockProvider::new(ProviderProfile::mock("echo"), echo_script(&c)),
            calls: AtomicU64::new(0),
        };
        let partial = RunConfig {
            limit: Some(3),
            ..RunConfig::default()
        };
        let first = run_evaluation(&c, &toy(), &p, &partial, Some(&store)).unwrap();
        assert_eq!(first.samples.len(), 3);
        let after_first = p.calls.load(Ordering::SeqCst);

        let full = run_evaluation(&c, &toy(), &p, &RunConfig::default(), Some(&store)).unwrap();
        let resumed_calls = p.calls.load(Ordering::SeqCst) - after_first;

        let q = Counting {
            inner: MockProvider::new(ProviderProfile::mock("echo"), echo_script(&c)),
            calls: AtomicU64::new(0),
        };
        let fresh = run_evaluation(&c, &toy(), &q, &RunConfig::default(), None).unwrap();
        assert_eq!(full, fresh);
        assert_eq!(after_first + resumed_calls, q.calls.load(Ordering::SeqCst));
        assert_eq!(store.load_record().unwrap(), fresh);
    }

    #[test]
    fn resume_into_foreign_run_is_refused() {
        let c = corpus();
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let p = MockProvider::new(ProviderProfile::mock("echo"), echo_script(&c));
        run_evaluation(&c, &toy(), &p, &RunConfig::default(), Some(&store)).unwrap();
        let other = RunConfig {
            policy: HallucinationPolicy::FilterFirst,
            ..RunConfig::default()
        };
        let err = run_evaluation(&c, &toy(), &p, &other, Some(&store)).unwrap_err();
        assert!(matches!(err, HarnessError::ResumeMismatch { .. }), "{err}");
    }

    #[test]
    fn provider_failures_are_tallied() {
        let c = corpus();
        let down = Down(ProviderProfile::mock("down"));
        let rec = run_evaluation(&c, &toy(), &down, &RunConfig::default(), None).unwrap();
        assert_eq!(rec.failures, 5);
        assert!(rec.report.is_none());
    }

    #[test]
    fn live_provider_without_pricing_is_rejected() {
        let mut profile = ProviderProfile::mock("live");
        profile.kind = ProviderKind::Gemini;
        let err = run_evaluation(&corpus(), &toy(), &Down(profile), &RunConfig::default(), None).unwrap_err();
        assert!(matches!(err, HarnessError::MissingPricing(_)));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn invalid_params_fail_before_any_call() {
        let bad = RunConfig {
            params: DecodingParams {
                temperature: -1.0,
                ..DecodingParams::default()
            },
            ..RunConfig::default()
        };
        let p = Counting {
            inner: MockProvider::new(ProviderProfile::mock("m"), MockScript::default()),
            calls: AtomicU64::new(0),
        };
        assert!(run_evaluation(&corpus(), &toy(), &p, &bad, None).is_err());
        assert_eq!(p.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn rescore_matches_original_and_honours_policy() {
        let c = corpus();
        let t = toy();
        let rest = Corpus {
            samples: c.samples.iter().filter(|s| s.id != "c").cloned().collect(),
        };
        let mut script = echo_script(&rest);
        let usage = Some(TokenUsage::new(10, 2));
        let tmpl = PromptTemplate::default();
        script
            .insert_request(&tmpl, "world cup", &["Sports", "Travel"], ScriptedReply::new("Sports, Cricket", usage))
            .unwrap();
        script
            .insert_request(&tmpl, "world cup", &["Basketball", "Soccer"], ScriptedReply::new("Soccer", usage))
            .unwrap();
        let script = script;
        let p = MockProvider::new(
            ProviderProfile::mock("m").with_pricing(PricingModel::new(Decimal::ONE, Decimal::TWO)),
            script,
        );
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::new(dir.path());
        let orig = run_evaluation(&c, &t, &p, &RunConfig::default(), Some(&store)).unwrap();
        assert_eq!(rescore(&store, &t, None).unwrap(), orig);

        let filtered = rescore(&store, &t, Some(HallucinationPolicy::FilterFirst)).unwrap();
        assert_eq!(filtered.manifest.policy, HallucinationPolicy::FilterFirst);
        assert_ne!(filtered.manifest.run_id, orig.manifest.run_id);
        let (o, f) = (orig.report.unwrap(), filtered.report.unwrap());
        assert!(f.precision.0 > o.precision.0);
        assert_eq!(f.hallucination_ratio, o.hallucination_ratio);
        assert_eq!(f.total_cost, o.total_cost);
    }

    #[test]
    fn ensemble_of_echoes_is_exact() {
        let c = corpus();
        let script = echo_script(&c);
        let members: Vec<Arc<dyn Provider>> = ["x", "y", "z"]
            .iter()
            .map(|n| Arc::new(MockProvider::new(ProviderProfile::mock(*n), script.clone())) as Arc<dyn Provider>)
            .collect();
        let cfg = EnsembleConfig::new(
            members.iter().map(|m| m.profile().clone()).collect(),
            VoteRule::Majority,
            TieBreak::Drop,
        )
        .unwrap();
        let rec = run_ensemble_evaluation(&c, &toy(), &members, &cfg, &RunConfig::default(), None).unwrap();
        let r = rec.report.unwrap();
        assert_eq!(r.f1, MacroValue::from_ratio(1, 1));
        assert_eq!(r.hallucination_ratio, MacroValue::from_ratio(0, 1));
        assert_eq!(rec.samples[0].members.len(), 3);
    }

    #[test]
    fn ensemble_survives_a_failed_member() {
        let c = corpus();
        let script = echo_script(&c);
        let members: Vec<Arc<dyn Provider>> = vec![
            Arc::new(MockProvider::new(ProviderProfile::mock("x"), script.clone())),
            Arc::new(MockProvider::new(ProviderProfile::mock("y"), script)),
            Arc::new(Down(ProviderProfile::mock("down"))),
        ];
        let cfg = EnsembleConfig::new(
            members.iter().map(|m| m.profile().clone()).collect(),
            VoteRule::Intersection,
            TieBreak::Drop,
        )
        .unwrap();
        let rec = run_ensemble_evaluation(&c, &toy(), &members, &cfg, &RunConfig::default(), None).unwrap();
        assert_eq!(rec.failures, 0);
        assert_eq!(rec.report.unwrap().recall, MacroValue::from_ratio(0, 1));
        assert!(rec.samples[0].members[2].error.is_some());
    }
}
