use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use taxocat::ensemble::EnsembleConfig;
use taxocat::harness::{
    ingest_corpus, rescore, run_ensemble_evaluation, run_evaluation, sweep, Corpus, HarnessError, RunConfig,
    RunRecord, RunStore, SweepGrid,
};
use taxocat::providers::{build_provider, ProviderConfig, ProviderError, TransportMode};
use taxocat::{
    render_report, DecodingParams, DescentOptions, PromptTemplate, Provider, ReportFormat, Taxonomy,
};

use crate::{Command, ParamArgs, RunArgs};

const TAXONOMY_COPY: &str = "taxonomy.tsv";
const REPORT_FILE: &str = "report.jsonl";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Harness(HarnessError),
    Provider(ProviderError),
    /// Every sample of every run failed.
    AllFailed(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => f.write_str(m),
            Self::Harness(e) => write!(f, "{e}"),
            Self::Provider(e) => write!(f, "{e}"),
            Self::AllFailed(first) => write!(f, "every sample failed; first error: {first}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Harness(e) => e.exit_code() as u8,
            Self::Provider(ProviderError::Config(_)) => 1,
            Self::Provider(_) | Self::AllFailed(_) => 3,
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Provider(ProviderError::Config(m) | ProviderError::InvalidParams(m)) | HarnessError::Config(m) => {
                Self::Usage(m)
            }
            other => Self::Harness(other),
        }
    }
}

impl From<ProviderError> for CliError {
    fn from(e: ProviderError) -> Self {
        Self::Provider(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run { provider, run, params } => {
            let setup = Setup::load(&run)?;
            let p = setup.provider(&provider)?;
            let config = setup.config(&run, params.decoding());
            let store = setup.store(&run)?;
            let rec = run_evaluation(&setup.corpus, &setup.taxonomy, p.as_ref(), &config, store.as_ref())?;
            finish(&[rec], store.as_ref())
        }
        Command::RunEnsemble {
            members,
            rule,
            tie_break,
            run,
            params,
        } => {
            let setup = Setup::load(&run)?;
            let providers = members
                .iter()
                .map(|m| setup.provider(m))
                .collect::<Result<Vec<_>>>()?;
            let ensemble = EnsembleConfig::new(
                providers.iter().map(|p| p.profile().clone()).collect(),
                rule,
                tie_break.into(),
            )
            .map_err(|e| CliError::Usage(e.to_string()))?;
            let config = setup.config(&run, params.decoding());
            let store = setup.store(&run)?;
            let rec = run_ensemble_evaluation(
                &setup.corpus,
                &setup.taxonomy,
                &providers,
                &ensemble,
                &config,
                store.as_ref(),
            )?;
            finish(&[rec], store.as_ref())
        }
        Command::Sweep { provider, grid, run } => {
            let grid = SweepGrid::load(&grid)?;
            let setup = Setup::load(&run)?;
            let p = setup.provider(&provider)?;
            let config = setup.config(&run, DecodingParams::default());
            let runs = sweep(&setup.corpus, &setup.taxonomy, p.as_ref(), &config, &grid, run.out.as_deref())?;
            if let Some(out) = &run.out {
                for entry in std::fs::read_dir(out).map_err(persist(out))? {
                    let dir = entry.map_err(persist(out))?.path();
                    if dir.is_dir() {
                        save_taxonomy(&dir, &setup.taxonomy)?;
                    }
                }
            }
            finish(&runs, None)
        }
        Command::Score {
            run_dir,
            taxonomy,
            policy,
            format,
        } => {
            let path = taxonomy.unwrap_or_else(|| run_dir.join(TAXONOMY_COPY));
            let taxonomy = load_taxonomy(&path)?;
            let rec = rescore(&RunStore::new(&run_dir), &taxonomy, policy)?;
            print!("{}", render_report(&[rec], format)?);
            Ok(())
        }
        Command::Report { runs, format } => {
            let records = runs
                .iter()
                .map(|d| {
                    if !d.join("manifest.json").exists() {
                        return Err(CliError::Usage(format!("{}: not a run directory", d.display())));
                    }
                    Ok(RunStore::new(d).load_record()?)
                })
                .collect::<Result<Vec<_>>>()?;
            print!("{}", render_report(&records, format)?);
            Ok(())
        }
    }
}

impl ParamArgs {
    fn decoding(&self) -> DecodingParams {
        DecodingParams {
            temperature: self.temperature,
            top_k: self.top_k,
            max_tokens: self.max_tokens,
        }
    }
}

struct Setup {
    taxonomy: Taxonomy,
    corpus: Corpus,
    template: PromptTemplate,
    providers: ProviderConfig,
    mode: TransportMode,
}

impl Setup {
    fn load(run: &RunArgs) -> Result<Self> {
        let template = match &run.template {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
                PromptTemplate::new(text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
            }
            None => PromptTemplate::default(),
        };
        let providers = ProviderConfig::load(&run.providers_config).map_err(|e| CliError::Usage(e.to_string()))?;
        let taxonomy = load_taxonomy(&run.taxonomy)?;
        let file = File::open(&run.corpus).map_err(|e| {
            CliError::Harness(HarnessError::Ingest {
                line: 0,
                reason: format!("{}: {e}", run.corpus.display()),
            })
        })?;
        let corpus = ingest_corpus(file, &taxonomy)?;
        if corpus.is_empty() {
            return Err(CliError::Harness(HarnessError::Ingest {
                line: 0,
                reason: format!("{}: no samples", run.corpus.display()),
            }));
        }
        let mode = match (&run.record, &run.replay) {
            (Some(p), _) => TransportMode::Record(p.clone()),
            (_, Some(p)) => TransportMode::Replay(p.clone()),
            _ => TransportMode::Live,
        };
        Ok(Self {
            taxonomy,
            corpus,
            template,
            providers,
            mode,
        })
    }

    fn provider(&self, name: &str) -> Result<Arc<dyn Provider>> {
        let spec = self.providers.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.providers.providers.iter().map(|p| p.name.as_str()).collect();
            CliError::Usage(format!("unknown provider `{name}` (configured: {})", known.join(", ")))
        })?;
        Ok(build_provider(spec, &self.providers.base_dir, &self.mode, &self.template)?)
    }

    fn config(&self, run: &RunArgs, params: DecodingParams) -> RunConfig {
        RunConfig {
            params,
            policy: run.policy,
            descent: DescentOptions {
                fan_out: run.fan_out(),
                accept_unoffered: run.accept_unoffered,
            },
            template: self.template.clone(),
            concurrency: run.concurrency,
            include_estimated_cost: run.include_estimated_cost,
            label: run.label.clone(),
            limit: run.limit,
        }
    }

    fn store(&self, run: &RunArgs) -> Result<Option<RunStore>> {
        let Some(out) = &run.out else {
            return Ok(None);
        };
        save_taxonomy(out, &self.taxonomy)?;
        Ok(Some(RunStore::new(out)))
    }
}

fn persist(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Harness(HarnessError::Persist(format!("{}: {e}", path.display())))
}

fn load_taxonomy(path: &Path) -> Result<Taxonomy> {
    let file = File::open(path).map_err(|e| {
        CliError::Harness(HarnessError::Taxonomy(taxocat::TaxonomyError::Io(format!(
            "{}: {e}",
            path.display()
        ))))
    })?;
    Taxonomy::load(file).map_err(|e| CliError::Harness(HarnessError::Taxonomy(e)))
}

fn save_taxonomy(dir: &Path, taxonomy: &Taxonomy) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(persist(dir))?;
    let path: PathBuf = dir.join(TAXONOMY_COPY);
    std::fs::write(&path, taxonomy.export()).map_err(persist(&path))
}

/// Prints both tables, writes the machine report next to the run, and
/// reports failures on stderr.
fn finish(records: &[RunRecord], store: Option<&RunStore>) -> Result<()> {
    print!("{}", render_report(records, ReportFormat::Table1)?);
    println!();
    print!("{}", render_report(records, ReportFormat::Table3)?);
    for r in records {
        if let Some(report) = &r.report {
            println!("{}: total cost ${} over {} samples", r.label(), report.total_cost, report.sample_count);
        }
        if r.failures > 0 {
            eprintln!("{}: {} sample(s) failed", r.label(), r.failures);
        }
    }
    if let Some(store) = store {
        let path = store.dir().join(REPORT_FILE);
        std::fs::write(&path, render_report(records, ReportFormat::Jsonl)?).map_err(persist(&path))?;
    }
    let failed_runs = records.iter().filter(|r| r.report.is_none()).count();
    if failed_runs > 0 && failed_runs == records.len() {
        let first_error = records
            .iter()
            .flat_map(|r| &r.samples)
            .find_map(|s| match &s.outcome {
                taxocat::harness::SampleOutcome::Failed { error } => Some(error.clone()),
                _ => None,
            })
            .unwrap_or_else(|| "no samples processed".into());
        return Err(CliError::AllFailed(first_error));
    }
    Ok(())
}
