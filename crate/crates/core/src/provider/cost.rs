use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::Role;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        TokenUsage { input_tokens, output_tokens }
    }

    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage::new(self.input_tokens + rhs.input_tokens, self.output_tokens + rhs.output_tokens)
    }
}

/// USD per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Price {
    #[serde(alias = "input_price_per_1M")]
    pub input: f64,
    #[serde(alias = "output_price_per_1M")]
    pub output: f64,
}

#[derive(Debug, Error)]
pub enum CostError {
    #[error("no price entry for model `{0}`")]
    UnknownModel(String),
    #[error("negative price for model `{0}`")]
    NegativePrice(String),
    #[error("cannot read price table: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid price table: {0}")]
    Toml(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(BTreeMap<String, Price>);

const BUILTIN_PRICES: &str = include_str!("../../config/prices.toml");

impl PriceTable {
    pub fn builtin() -> Self {
        Self::from_toml(BUILTIN_PRICES).expect("built-in price table is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, CostError> {
        let table: PriceTable = toml::from_str(text)?;
        for (model, price) in &table.0 {
            if !(price.input >= 0.0 && price.output >= 0.0) {
                return Err(CostError::NegativePrice(model.clone()));
            }
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, CostError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn insert(&mut self, model: impl Into<String>, price: Price) {
        self.0.insert(model.into(), price);
    }

    pub fn price(&self, model: &str) -> Result<Price, CostError> {
        self.0.get(model).copied().ok_or_else(|| CostError::UnknownModel(model.to_string()))
    }

    pub fn cost(&self, model: &str, usage: TokenUsage) -> Result<f64, CostError> {
        Ok(compute_cost(usage, self.price(model)?))
    }
}

pub fn compute_cost(usage: TokenUsage, price: Price) -> f64 {
    (usage.input_tokens as f64 * price.input + usage.output_tokens as f64 * price.output) / 1_000_000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRecord {
    pub session_id: String,
    pub role: Role,
    pub usage: TokenUsage,
    pub cost_usd: f64,
}
