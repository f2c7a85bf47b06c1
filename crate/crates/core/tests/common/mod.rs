#![allow(dead_code)]

use std::fs::File;
use std::path::PathBuf;
use std::str::FromStr;

use num_rational::BigRational;
use rust_decimal::Decimal;
use serde::Deserialize;
use std::collections::BTreeMap;
use taxocat::harness::{ingest_corpus, Corpus};
use taxocat::providers::{MockProvider, MockScript, ProviderProfile};
use taxocat::{PricingModel, PromptTemplate, Taxonomy};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn taxonomy() -> Taxonomy {
    Taxonomy::load(File::open(fixture("taxonomy.tsv")).unwrap()).unwrap()
}

pub fn corpus(taxonomy: &Taxonomy) -> Corpus {
    ingest_corpus(File::open(fixture("corpus5.jsonl")).unwrap(), taxonomy).unwrap()
}

#[derive(Debug, Deserialize)]
pub struct ExpectedSample {
    pub predicted: Vec<String>,
    pub extras: Vec<String>,
    pub accuracy: String,
    pub precision: String,
    pub recall: String,
    pub f1: String,
    pub hallucination_ratio: String,
    pub inflation_ratio: String,
    pub inflation_ratio_per: String,
    pub cost: String,
}

#[derive(Debug, Deserialize)]
pub struct Expected {
    pub pricing: PricingModel,
    pub samples: BTreeMap<String, ExpectedSample>,
    pub macro_: BTreeMap<String, String>,
}

pub fn expected() -> Expected {
    #[derive(Deserialize)]
    struct Raw {
        pricing: PricingModel,
        samples: BTreeMap<String, ExpectedSample>,
        #[serde(rename = "macro")]
        macro_: BTreeMap<String, String>,
    }
    let raw: Raw = serde_json::from_reader(File::open(fixture("expected5.json")).unwrap()).unwrap();
    Expected {
        pricing: raw.pricing,
        samples: raw.samples,
        macro_: raw.macro_,
    }
}

pub fn fixture_mock() -> MockProvider {
    let script = MockScript::load(File::open(fixture("mock5.jsonl")).unwrap(), &PromptTemplate::default()).unwrap();
    MockProvider::new(
        ProviderProfile::mock("fixture-mock").with_pricing(expected().pricing),
        script,
    )
}

pub fn q(s: &str) -> BigRational {
    BigRational::from_str(s).unwrap()
}

pub fn usd(s: &str) -> Decimal {
    Decimal::from_str(s).unwrap()
}
