//! Taxonomy-aware LLM categorization harness.
//!
//! Documents are categorized by walking a category hierarchy tier by tier
//! with a model provider, then scored against expert labels with classic
//! set metrics plus hallucination ratio, inflation ratio and token cost.

pub mod ensemble;
pub mod harness;
pub mod metrics;
pub mod prompting;
pub mod providers;
pub mod taxonomy;

pub use ensemble::{combine, EnsembleConfig, EnsembleError, TieBreak, VoteRule};
pub use harness::{
    ingest_corpus, render_report, run_evaluation, Corpus, HarnessError, ReportFormat, RunConfig,
    RunRecord, RunStore,
};
pub use metrics::{
    CorpusReport, HallucinationPolicy, MacroValue, MatchCounts, PricingModel, Ratio, SampleMetrics,
    TokenUsage, Usd,
};
pub use prompting::{DecodingParams, DescentOptions, DescentTrace, PromptTemplate};
pub use providers::{Provider, ProviderError, ProviderProfile};
pub use taxonomy::{normalize_label, CategorySet, NodeId, Taxonomy, TaxonomyError, TaxonomyNode};
