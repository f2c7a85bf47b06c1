//! Corpus ingestion, evaluation runs, parameter sweeps and reporting.

mod corpus;
mod record;
mod report;
mod run;
mod sweep;

pub use corpus::{ingest_corpus, Corpus, Sample};
pub use record::{
    MemberOutcome, RunKind, RunManifest, RunRecord, RunStore, SampleAppender, SampleOutcome,
    SampleRecord,
};
pub use report::{parse_machine_report, render_report, ReportFormat, RunSummary};
pub use run::{rescore, run_ensemble_evaluation, run_evaluation, RunConfig, DEFAULT_CONCURRENCY};
pub use sweep::{sweep, SweepGrid, SweepPoint};

use crate::ensemble::EnsembleError;
use crate::metrics::MetricsError;
use crate::providers::ProviderError;
use crate::taxonomy::TaxonomyError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("corpus line {line}: {reason}")]
    Ingest { line: usize, reason: String },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error("run storage: {0}")]
    Persist(String),
    #[error("{dir} holds run {existing}, not {requested}; use a fresh directory")]
    ResumeMismatch {
        dir: String,
        existing: String,
        requested: String,
    },
    #[error("no pricing configured for provider `{0}`")]
    MissingPricing(String),
    #[error("sweep grid has no points")]
    EmptyGrid,
    #[error("nothing to report")]
    EmptyInput,
    #[error("report: {0}")]
    Report(String),
    #[error("{0}")]
    Config(String),
}

impl HarnessError {
    /// Process exit status: 2 for bad input data, 3 for provider failures, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Ingest { .. } | Self::Taxonomy(_) => 2,
            Self::Provider(_) | Self::MissingPricing(_) => 3,
            _ => 1,
        }
    }
}
