use std::path::Path;

use serde::Deserialize;

use super::record::{RunRecord, RunStore};
use super::run::{run_evaluation, RunConfig};
use super::corpus::Corpus;
use super::HarnessError;
use crate::prompting::{DecodingParams, DEFAULT_MAX_TOKENS};
use crate::providers::Provider;
use crate::taxonomy::Taxonomy;

/// Decoding parameter grid. In TOML, `top_k = 0` stands for "unset" and an
/// absent axis takes its default value.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default = "default_temperature")]
    pub temperature: Vec<f64>,
    #[serde(default = "default_top_k", deserialize_with = "top_k_axis")]
    pub top_k: Vec<Option<u32>>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: Vec<u32>,
}

fn default_temperature() -> Vec<f64> {
    vec![0.0]
}

fn default_top_k() -> Vec<Option<u32>> {
    vec![None]
}

fn default_max_tokens() -> Vec<u32> {
    vec![DEFAULT_MAX_TOKENS]
}

fn top_k_axis<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<Option<u32>>, D::Error> {
    let raw = Vec::<u32>::deserialize(d)?;
    Ok(raw.into_iter().map(|k| (k != 0).then_some(k)).collect())
}

pub type SweepPoint = DecodingParams;

impl SweepGrid {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(format!("sweep grid: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Cartesian product, temperature outermost.
    pub fn points(&self) -> Result<Vec<SweepPoint>, HarnessError> {
        let mut out = Vec::new();
        for &temperature in &self.temperature {
            for &top_k in &self.top_k {
                for &max_tokens in &self.max_tokens {
                    out.push(DecodingParams {
                        temperature,
                        top_k,
                        max_tokens,
                    });
                }
            }
        }
        if out.is_empty() {
            return Err(HarnessError::EmptyGrid);
        }
        Ok(out)
    }
}

fn point_dir(p: &SweepPoint) -> String {
    let k = p.top_k.map_or_else(|| "none".to_string(), |k| k.to_string());
    format!("T{}_k{k}_max{}", p.temperature, p.max_tokens)
}

/// One evaluation per grid point. Every point is validated against the
/// provider before anything runs. With `out`, each point persists to its own
/// subdirectory and is resumable.
pub fn sweep(
    corpus: &Corpus,
    taxonomy: &Taxonomy,
    provider: &dyn Provider,
    base: &RunConfig,
    grid: &SweepGrid,
    out: Option<&Path>,
) -> Result<Vec<RunRecord>, HarnessError> {
    let points = grid.points()?;
    for p in &points {
        provider.profile().validate_params(p)?;
    }
    points
        .iter()
        .map(|p| {
            let config = RunConfig {
                params: *p,
                label: Some(format!(
                    "{} {p}",
                    base.label.as_deref().unwrap_or(provider.name())
                )),
                ..base.clone()
            };
            let store = out.map(|dir| RunStore::new(dir.join(point_dir(p))));
            run_evaluation(corpus, taxonomy, provider, &config, store.as_ref())
        })
        .collect()
}
