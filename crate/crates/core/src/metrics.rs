//! Per-sample and corpus-level scores.
//!
//! Per-sample ratios are exact fractions of small counts; corpus means are
//! summed as arbitrary-precision rationals so that aggregation is exact and
//! independent of sample order. Currency is exact decimal.

use std::fmt;
use std::ops::Add;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rust_decimal::Decimal;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::taxonomy::{CategorySet, Taxonomy, TaxonomyError};

/// Exact ratio of two counts.
pub type Ratio = num_rational::Ratio<u64>;

/// US dollars, exact decimal.
pub type Usd = Decimal;

const TOKENS_PER_PRICE_UNIT: u64 = 1_000_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("expert label set is empty")]
    EmptyExpertSet,
    #[error("expert label set contains unresolved labels")]
    ExpertHasExtras,
    #[error("cannot aggregate an empty corpus")]
    EmptyCorpus,
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

/// How hallucinated (unresolved) predictions enter the confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HallucinationPolicy {
    /// Each hallucination is a false positive.
    #[default]
    CountAsFp,
    /// Hallucinations are filtered out before scoring.
    FilterFirst,
}

impl fmt::Display for HallucinationPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::CountAsFp => "count-as-fp",
            Self::FilterFirst => "filter-first",
        })
    }
}

impl std::str::FromStr for HallucinationPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "count-as-fp" => Ok(Self::CountAsFp),
            "filter-first" => Ok(Self::FilterFirst),
            other => Err(format!(
                "unknown policy `{other}` (expected count-as-fp or filter-first)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn check_expert(expert: &CategorySet) -> Result<(), MetricsError> {
    if !expert.extras.is_empty() {
        return Err(MetricsError::ExpertHasExtras);
    }
    if expert.labels.is_empty() {
        return Err(MetricsError::EmptyExpertSet);
    }
    Ok(())
}

pub fn match_counts(
    predicted: &CategorySet,
    expert: &CategorySet,
    policy: HallucinationPolicy,
) -> Result<MatchCounts, MetricsError> {
    check_expert(expert)?;
    let tp = predicted.labels.intersection(&expert.labels).count() as u64;
    let mut fp = predicted.labels.difference(&expert.labels).count() as u64;
    if policy == HallucinationPolicy::CountAsFp {
        fp += predicted.extras.len() as u64;
    }
    let fn_ = expert.labels.difference(&predicted.labels).count() as u64;
    Ok(MatchCounts { tp, fp, fn_ })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassicMetrics {
    pub accuracy: Ratio,
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: Ratio,
}

fn ratio_or_zero(num: u64, den: u64) -> Ratio {
    if den == 0 {
        Ratio::zero()
    } else {
        Ratio::new(num, den)
    }
}

/// Jaccard accuracy, precision, recall and F1. Zero denominators yield 0.
pub fn classic_metrics(c: MatchCounts) -> ClassicMetrics {
    let accuracy = ratio_or_zero(c.tp, c.tp + c.fp + c.fn_);
    let precision = ratio_or_zero(c.tp, c.tp + c.fp);
    let recall = ratio_or_zero(c.tp, c.tp + c.fn_);
    let sum = precision + recall;
    let f1 = if sum.is_zero() {
        Ratio::zero()
    } else {
        Ratio::from_integer(2) * precision * recall / sum
    };
    ClassicMetrics {
        accuracy,
        precision,
        recall,
        f1,
    }
}

/// Share of emitted categories that are hallucinations; 0 for an empty prediction.
pub fn hallucination_ratio(predicted: &CategorySet) -> Ratio {
    ratio_or_zero(predicted.extras.len() as u64, predicted.len() as u64)
}

/// Inflation ratio before and after parent exclusion.
pub fn inflation_ratios(
    predicted: &CategorySet,
    expert: &CategorySet,
    taxonomy: &Taxonomy,
) -> Result<(Ratio, Ratio), MetricsError> {
    check_expert(expert)?;
    let den = expert.labels.len() as u64;
    let reduced = taxonomy.parent_exclusion(predicted)?;
    Ok((
        Ratio::new(predicted.len() as u64, den),
        Ratio::new(reduced.len() as u64, den),
    ))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Self {
            input_tokens,
            output_tokens,
        }
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: Self) -> Self {
        Self {
            input_tokens: self.input_tokens + rhs.input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
        }
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

/// Prices in USD per one million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PricingModel {
    pub input_price_per_million: Usd,
    pub output_price_per_million: Usd,
}

impl PricingModel {
    pub fn new(input_price_per_million: Usd, output_price_per_million: Usd) -> Self {
        Self {
            input_price_per_million,
            output_price_per_million,
        }
    }
}

pub fn sample_cost(usage: TokenUsage, pricing: &PricingModel) -> Usd {
    let raw = Decimal::from(usage.input_tokens) * pricing.input_price_per_million
        + Decimal::from(usage.output_tokens) * pricing.output_price_per_million;
    (raw / Decimal::from(TOKENS_PER_PRICE_UNIT)).normalize()
}

/// Every per-sample score for one prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub accuracy: Ratio,
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: Ratio,
    pub hallucination_ratio: Ratio,
    pub inflation_ratio: Ratio,
    pub inflation_ratio_per: Ratio,
    pub cost: Usd,
    /// Usage was missing for at least one request, so `cost` is a lower bound.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub cost_estimated: bool,
    pub cluster_size: u64,
    pub filtered_cluster_size: u64,
}

impl SampleMetrics {
    pub fn score(
        predicted: &CategorySet,
        expert: &CategorySet,
        taxonomy: &Taxonomy,
        policy: HallucinationPolicy,
        cost: Usd,
    ) -> Result<Self, MetricsError> {
        let c = classic_metrics(match_counts(predicted, expert, policy)?);
        let (ir, ir_per) = inflation_ratios(predicted, expert, taxonomy)?;
        Ok(Self {
            accuracy: c.accuracy,
            precision: c.precision,
            recall: c.recall,
            f1: c.f1,
            hallucination_ratio: hallucination_ratio(predicted),
            inflation_ratio: ir,
            inflation_ratio_per: ir_per,
            cost,
            cost_estimated: false,
            cluster_size: predicted.len() as u64,
            filtered_cluster_size: predicted.labels.len() as u64,
        })
    }
}

/// An exact corpus mean, carried alongside its nearest `f64`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MacroValue(pub BigRational);

impl MacroValue {
    pub fn from_ratio(num: i64, den: i64) -> Self {
        Self(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn exact(&self) -> &BigRational {
        &self.0
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn mean<I: IntoIterator<Item = Ratio>>(values: I) -> Option<Self> {
        let mut sum = BigRational::zero();
        let mut k = 0u64;
        for v in values {
            sum += BigRational::new(BigInt::from(*v.numer()), BigInt::from(*v.denom()));
            k += 1;
        }
        (k > 0).then(|| Self(sum / BigRational::from_integer(BigInt::from(k))))
    }

    /// Half-up decimal rounding of the exact value.
    pub fn round(&self, places: u32) -> String {
        round_half_up(&self.0, places)
    }
}

pub(crate) fn round_half_up(value: &BigRational, places: u32) -> String {
    let scale = BigInt::from(10u32).pow(places);
    let scaled = value * BigRational::from_integer(scale.clone());
    let negative = scaled < BigRational::zero();
    let abs = if negative { -scaled } else { scaled };
    let half = BigRational::new(BigInt::from(1), BigInt::from(2));
    let units = (abs + half).floor().to_integer();
    let int_part = &units / &scale;
    let frac_part = &units % &scale;
    let sign = if negative && !units.is_zero() { "-" } else { "" };
    if places == 0 {
        format!("{sign}{int_part}")
    } else {
        format!(
            "{sign}{int_part}.{:0>width$}",
            frac_part.to_string(),
            width = places as usize
        )
    }
}

impl fmt::Display for MacroValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

#[derive(Serialize, Deserialize)]
struct MacroValueRepr {
    exact: String,
    approx: f64,
}

impl Serialize for MacroValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        MacroValueRepr {
            exact: self.0.to_string(),
            approx: self.to_f64(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MacroValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let repr = MacroValueRepr::deserialize(d)?;
        repr.exact
            .parse::<BigRational>()
            .map(MacroValue)
            .map_err(|e| serde::de::Error::custom(format!("bad exact value `{}`: {e}", repr.exact)))
    }
}

/// Macro means over a corpus plus summed cost.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub sample_count: u64,
    pub accuracy: MacroValue,
    pub precision: MacroValue,
    pub recall: MacroValue,
    pub f1: MacroValue,
    pub hallucination_ratio: MacroValue,
    pub inflation_ratio: MacroValue,
    pub inflation_ratio_per: MacroValue,
    pub mean_cluster_size: MacroValue,
    pub mean_filtered_cluster_size: MacroValue,
    pub total_cost: Usd,
    /// Samples whose usage was incomplete and whose cost is left out of
    /// `total_cost` (unless estimated costs were explicitly included).
    #[serde(default)]
    pub estimated_cost_samples: u64,
}

pub fn macro_aggregate(samples: &[SampleMetrics]) -> Result<CorpusReport, MetricsError> {
    macro_aggregate_with(samples, false)
}

/// As [`macro_aggregate`]; `include_estimated` admits costs flagged as
/// estimated into the total.
pub fn macro_aggregate_with(
    samples: &[SampleMetrics],
    include_estimated: bool,
) -> Result<CorpusReport, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mean = |f: fn(&SampleMetrics) -> Ratio| {
        MacroValue::mean(samples.iter().map(f)).expect("nonempty")
    };
    let total_cost = samples
        .iter()
        .filter(|s| include_estimated || !s.cost_estimated)
        .map(|s| s.cost)
        .sum::<Decimal>()
        .normalize();
    Ok(CorpusReport {
        sample_count: samples.len() as u64,
        accuracy: mean(|s| s.accuracy),
        precision: mean(|s| s.precision),
        recall: mean(|s| s.recall),
        f1: mean(|s| s.f1),
        hallucination_ratio: mean(|s| s.hallucination_ratio),
        inflation_ratio: mean(|s| s.inflation_ratio),
        inflation_ratio_per: mean(|s| s.inflation_ratio_per),
        mean_cluster_size: mean(|s| Ratio::from_integer(s.cluster_size)),
        mean_filtered_cluster_size: mean(|s| Ratio::from_integer(s.filtered_cluster_size)),
        total_cost,
        estimated_cost_samples: samples.iter().filter(|s| s.cost_estimated).count() as u64,
    })
}
