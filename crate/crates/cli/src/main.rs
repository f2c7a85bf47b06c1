mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use taxocat::ensemble::{TieBreak, VoteRule};
use taxocat::prompting::FanOut;
use taxocat::{HallucinationPolicy, ReportFormat};

#[derive(Parser)]
#[command(name = "taxocat", version, about = "Taxonomy-aware LLM categorization benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Categorize and score a corpus with one provider.
    Run {
        #[arg(long)]
        provider: String,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Categorize with several providers and combine their votes.
    RunEnsemble {
        /// Comma-separated provider names.
        #[arg(long, value_delimiter = ',', required = true)]
        members: Vec<String>,
        /// majority, quorum:N, intersection or union-per.
        #[arg(long, default_value = "majority")]
        rule: VoteRule,
        #[arg(long, value_enum, default_value = "drop")]
        tie_break: TieBreakArg,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// One run per point of a decoding-parameter grid.
    Sweep {
        #[arg(long)]
        provider: String,
        /// TOML file with `temperature`, `top_k` and `max_tokens` lists.
        #[arg(long)]
        grid: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Re-score a run directory from its recorded replies, without querying.
    Score {
        #[arg(long)]
        run_dir: PathBuf,
        /// Defaults to the taxonomy copy saved with the run.
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long)]
        policy: Option<HallucinationPolicy>,
        #[arg(long, default_value = "table1")]
        format: ReportFormat,
    },
    /// Render reports over one or more run directories.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        #[arg(long, default_value = "table1")]
        format: ReportFormat,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    taxonomy: PathBuf,
    #[arg(long, default_value = "providers.toml")]
    providers_config: PathBuf,
    #[arg(long, default_value = "count-as-fp")]
    policy: HallucinationPolicy,
    /// Run directory; re-running into the same directory resumes.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append every HTTP exchange to this fixture file.
    #[arg(long, conflicts_with = "replay")]
    record: Option<PathBuf>,
    /// Answer HTTP requests from this fixture file only.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Prompt template file with one `{categories}` placeholder.
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long, default_value_t = taxocat::harness::DEFAULT_CONCURRENCY)]
    concurrency: usize,
    /// Stop after this many samples (resume later with the same --out).
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    label: Option<String>,
    /// Refine only the first accepted category at each tier.
    #[arg(long)]
    first_only: bool,
    /// Keep taxonomy categories the model named without being offered them.
    #[arg(long)]
    accept_unoffered: bool,
    /// Count costs of samples with missing usage in the total.
    #[arg(long)]
    include_estimated_cost: bool,
}

#[derive(Args)]
struct ParamArgs {
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    #[arg(long)]
    top_k: Option<u32>,
    #[arg(long, default_value_t = taxocat::prompting::DEFAULT_MAX_TOKENS)]
    max_tokens: u32,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TieBreakArg {
    Drop,
    Keep,
}

impl From<TieBreakArg> for TieBreak {
    fn from(t: TieBreakArg) -> Self {
        match t {
            TieBreakArg::Drop => TieBreak::Drop,
            TieBreakArg::Keep => TieBreak::Keep,
        }
    }
}

impl RunArgs {
    fn fan_out(&self) -> FanOut {
        if self.first_only {
            FanOut::FirstOnly
        } else {
            FanOut::All
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("TAXOCAT_LOG")
                .unwrap_or_else(|_| "warn".into()),
        )
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .with_writer(std::io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
