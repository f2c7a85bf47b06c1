use std::collections::BTreeMap;
use std::str::FromStr;

use rust_decimal::Decimal;

use crate::metrics::PricingModel;
use crate::taxonomy::normalize_label;

/// Shipped per-1M-token prices (USD), September 2025 public rates.
const TABLE: [(&str, &str, &str); 10] = [
    ("Claude 3.5", "0.80", "4.00"),
    ("Gemini 1.5 Flash", "0.075", "0.30"),
    ("Gemini 2.0 Flash", "0.10", "0.40"),
    ("Mistral", "8.00", "8.00"),
    ("LLaMA 3 8B", "0.05", "0.08"),
    ("LLaMA 3 70B", "0.59", "0.79"),
    ("Grok", "2.00", "10.00"),
    ("DeepSeek", "0.27", "1.10"),
    ("GPT 20B", "0.10", "0.50"),
    ("GPT 120B", "0.15", "0.75"),
];

fn entry(input: &str, output: &str) -> PricingModel {
    PricingModel::new(
        Decimal::from_str(input).expect("static price"),
        Decimal::from_str(output).expect("static price"),
    )
}

pub fn pricing_table() -> BTreeMap<String, PricingModel> {
    TABLE
        .iter()
        .map(|(name, i, o)| (name.to_string(), entry(i, o)))
        .collect()
}

/// Case- and whitespace-insensitive lookup in the shipped table.
pub fn lookup_pricing(name: &str) -> Option<PricingModel> {
    let key = normalize_label(name);
    TABLE
        .iter()
        .find(|(n, _, _)| normalize_label(n) == key)
        .map(|(_, i, o)| entry(i, o))
}
