//! Run records and their on-disk layout.
//!
//! A run directory holds `manifest.json` (what was run) and `samples.jsonl`
//! (one appended line per finished sample). A later line for the same sample
//! supersedes earlier ones; a line truncated by an interrupted write is
//! ignored on load.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::ensemble::{TieBreak, VoteRule};
use crate::metrics::{
    macro_aggregate_with, CorpusReport, HallucinationPolicy, PricingModel, SampleMetrics,
    TokenUsage, Usd,
};
use crate::prompting::{DecodingParams, DescentOptions, DescentTrace};
use crate::taxonomy::CategorySet;

const MANIFEST: &str = "manifest.json";
const SAMPLES: &str = "samples.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum RunKind {
    Single {
        provider: String,
    },
    Ensemble {
        members: Vec<String>,
        rule: VoteRule,
        tie_break: TieBreak,
    },
}

impl RunKind {
    pub fn member_names(&self) -> Vec<&str> {
        match self {
            Self::Single { provider } => vec![provider.as_str()],
            Self::Ensemble { members, .. } => members.iter().map(String::as_str).collect(),
        }
    }
}

/// Everything that determines a run's results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub label: String,
    pub kind: RunKind,
    pub params: DecodingParams,
    pub policy: HallucinationPolicy,
    pub descent: DescentOptions,
    pub template_fingerprint: String,
    pub corpus_fingerprint: String,
    pub sample_count: usize,
    /// Per-member pricing used for cost.
    pub pricing: BTreeMap<String, PricingModel>,
    #[serde(default)]
    pub include_estimated_cost: bool,
}

impl RunManifest {
    /// Deterministic id derived from the manifest content (excluding the id and label).
    pub fn derive_id(&self) -> String {
        let mut m = self.clone();
        m.run_id = String::new();
        m.label = String::new();
        let bytes = serde_json::to_vec(&m).expect("manifest serializes");
        hex::encode(&Sha256::digest(bytes)[..6])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberOutcome {
    pub member: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<DescentTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub usage: TokenUsage,
    pub usage_complete: bool,
    pub cost: Usd,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum SampleOutcome {
    Scored {
        predicted: CategorySet,
        metrics: SampleMetrics,
    },
    Failed {
        error: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    /// Position of the sample in its corpus.
    pub index: usize,
    pub sample_id: String,
    pub expert: CategorySet,
    pub members: Vec<MemberOutcome>,
    pub outcome: SampleOutcome,
}

impl SampleRecord {
    pub fn metrics(&self) -> Option<&SampleMetrics> {
        match &self.outcome {
            SampleOutcome::Scored { metrics, .. } => Some(metrics),
            SampleOutcome::Failed { .. } => None,
        }
    }

    pub fn is_failed(&self) -> bool {
        matches!(self.outcome, SampleOutcome::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub manifest: RunManifest,
    /// Per-sample rows in corpus order.
    pub samples: Vec<SampleRecord>,
    pub report: Option<CorpusReport>,
    pub failures: u64,
}

impl RunRecord {
    /// Assembles a record, computing the aggregate from the scored rows.
    /// Failed samples are tallied and left out of every mean.
    pub fn from_samples(manifest: RunManifest, samples: Vec<SampleRecord>) -> Result<Self, HarnessError> {
        let report = aggregate(&samples, manifest.include_estimated_cost)?;
        let failures = samples.iter().filter(|s| s.is_failed()).count() as u64;
        Ok(Self {
            manifest,
            samples,
            report,
            failures,
        })
    }

    pub fn label(&self) -> &str {
        &self.manifest.label
    }

    /// Recomputes the aggregate from the per-sample rows.
    pub fn recompute(&self) -> Result<Option<CorpusReport>, HarnessError> {
        aggregate(&self.samples, self.manifest.include_estimated_cost)
    }
}

fn aggregate(samples: &[SampleRecord], include_estimated: bool) -> Result<Option<CorpusReport>, HarnessError> {
    let scored: Vec<SampleMetrics> = samples.iter().filter_map(|s| s.metrics().cloned()).collect();
    if scored.is_empty() {
        return Ok(None);
    }
    Ok(Some(macro_aggregate_with(&scored, include_estimated)?))
}

/// Append-only persistence for one run.
#[derive(Debug, Clone)]
pub struct RunStore {
    dir: PathBuf,
}

impl RunStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn io(&self, e: impl std::fmt::Display) -> HarnessError {
        HarnessError::Persist(format!("{}: {e}", self.dir.display()))
    }

    pub fn read_manifest(&self) -> Result<Option<RunManifest>, HarnessError> {
        let path = self.dir.join(MANIFEST);
        if !path.exists() {
            return Ok(None);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| self.io(e))?;
        serde_json::from_str(&text).map(Some).map_err(|e| self.io(e))
    }

    /// Creates the run directory, or checks that an existing one belongs to
    /// the same run so it can be resumed.
    pub fn open(&self, manifest: &RunManifest) -> Result<(), HarnessError> {
        std::fs::create_dir_all(&self.dir).map_err(|e| self.io(e))?;
        match self.read_manifest()? {
            Some(existing) if existing.run_id != manifest.run_id => Err(HarnessError::ResumeMismatch {
                dir: self.dir.display().to_string(),
                existing: existing.run_id,
                requested: manifest.run_id.clone(),
            }),
            Some(_) => Ok(()),
            None => {
                let text = serde_json::to_string_pretty(manifest).map_err(|e| self.io(e))?;
                std::fs::write(self.dir.join(MANIFEST), text + "\n").map_err(|e| self.io(e))
            }
        }
    }

    /// Latest record per sample id, in corpus order.
    pub fn load_samples(&self) -> Result<Vec<SampleRecord>, HarnessError> {
        let path = self.dir.join(SAMPLES);
        if !path.exists() {
            return Ok(Vec::new());
        }
        let f = File::open(&path).map_err(|e| self.io(e))?;
        let mut out: Vec<SampleRecord> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| self.io(e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<SampleRecord>(&line) {
                Ok(rec) => match index.get(&rec.sample_id) {
                    Some(&at) => out[at] = rec,
                    None => {
                        index.insert(rec.sample_id.clone(), out.len());
                        out.push(rec);
                    }
                },
                Err(e) if e.is_eof() => {
                    tracing::warn!(line = i + 1, error = %e, "ignoring torn record");
                }
                Err(e) => return Err(self.io(format!("{SAMPLES} line {}: {e}", i + 1))),
            }
        }
        out.sort_by_key(|r| r.index);
        Ok(out)
    }

    /// Rebuilds the run record from what is on disk.
    pub fn load_record(&self) -> Result<RunRecord, HarnessError> {
        let manifest = self
            .read_manifest()?
            .ok_or_else(|| self.io(format!("no {MANIFEST}; not a run directory")))?;
        RunRecord::from_samples(manifest, self.load_samples()?)
    }

    pub fn appender(&self) -> Result<SampleAppender, HarnessError> {
        let path = self.dir.join(SAMPLES);
        // a torn tail from a killed writer must not glue onto the next record
        let needs_newline = std::fs::read(&path)
            .map(|b| b.last().is_some_and(|&c| c != b'\n'))
            .unwrap_or(false);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| self.io(e))?;
        if needs_newline {
            file.write_all(b"\n").map_err(|e| self.io(e))?;
        }
        Ok(SampleAppender { file, store: self.clone() })
    }
}

pub struct SampleAppender {
    file: File,
    store: RunStore,
}

impl SampleAppender {
    pub fn append(&mut self, rec: &SampleRecord) -> Result<(), HarnessError> {
        let line = serde_json::to_string(rec).map_err(|e| self.store.io(e))?;
        writeln!(self.file, "{line}").map_err(|e| self.store.io(e))?;
        self.file.flush().map_err(|e| self.store.io(e))
    }
}
