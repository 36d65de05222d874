//! Estimates processing runtime and cost from token counts: self-hosted
//! throughput-based runtime pricing and linear per-token API pricing, with
//! per-pair breakdowns and a serializable cost report.

use std::collections::BTreeMap;
use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Measured token throughput and machine rate for self-hosted inference.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThroughputProfile {
    /// Prompt-side processing speed, tokens per second.
    pub input_speed: f64,
    /// Generation speed, tokens per second.
    pub output_speed: f64,
    /// Machine cost per hour.
    pub hourly_rate: f64,
}

impl ThroughputProfile {
    pub fn validate(&self) -> Result<(), CostError> {
        if !(self.input_speed.is_finite() && self.input_speed > 0.0) {
            return Err(CostError::InvalidSpeed {
                which: "input",
                value: self.input_speed,
            });
        }
        if !(self.output_speed.is_finite() && self.output_speed > 0.0) {
            return Err(CostError::InvalidSpeed {
                which: "output",
                value: self.output_speed,
            });
        }
        if !(self.hourly_rate.is_finite() && self.hourly_rate >= 0.0) {
            return Err(CostError::InvalidRate(self.hourly_rate));
        }
        Ok(())
    }
}

/// Prompt and completion token counts for one or more model calls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        TokenUsage {
            input_tokens,
            output_tokens,
        }
    }
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, other: TokenUsage) -> TokenUsage {
        TokenUsage {
            input_tokens: self.input_tokens + other.input_tokens,
            output_tokens: self.output_tokens + other.output_tokens,
        }
    }
}

/// Per-1000-token API prices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiPricing {
    pub price_per_1k_in: f64,
    pub price_per_1k_out: f64,
}

impl ApiPricing {
    pub fn validate(&self) -> Result<(), CostError> {
        for (which, p) in [("input", self.price_per_1k_in), ("output", self.price_per_1k_out)] {
            if !(p.is_finite() && p >= 0.0) {
                return Err(CostError::InvalidPrice { which, value: p });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CostError {
    #[error("{which} speed {value} must be finite and > 0 tokens/second")]
    InvalidSpeed { which: &'static str, value: f64 },
    #[error("hourly rate {0} must be finite and >= 0")]
    InvalidRate(f64),
    #[error("{which} price {value} must be finite and >= 0")]
    InvalidPrice { which: &'static str, value: f64 },
    #[error("n_pairs must be >= 1, got {0}")]
    InvalidPairCount(u64),
}

/// Wall-clock hours to process `usage` at the profile's speeds:
/// `input/(input_speed·3600) + output/(output_speed·3600)`.
pub fn runtime_hours(usage: TokenUsage, profile: &ThroughputProfile) -> Result<f64, CostError> {
    profile.validate()?;
    Ok(usage.input_tokens as f64 / (profile.input_speed * 3600.0)
        + usage.output_tokens as f64 / (profile.output_speed * 3600.0))
}

/// Runtime hours multiplied by the machine's hourly rate.
pub fn self_hosted_cost(usage: TokenUsage, profile: &ThroughputProfile) -> Result<f64, CostError> {
    Ok(runtime_hours(usage, profile)? * profile.hourly_rate)
}

/// Linear per-token API cost: `in/1000·price_in + out/1000·price_out`.
pub fn api_cost(usage: TokenUsage, pricing: &ApiPricing) -> Result<f64, CostError> {
    pricing.validate()?;
    Ok(usage.input_tokens as f64 / 1000.0 * pricing.price_per_1k_in
        + usage.output_tokens as f64 / 1000.0 * pricing.price_per_1k_out)
}

/// Total cost split evenly across `n_pairs` patient-trial pairs, at full
/// precision; apply [`round_to_cents`] for display.
pub fn per_pair_cost(total: f64, n_pairs: u64) -> Result<f64, CostError> {
    if n_pairs < 1 {
        return Err(CostError::InvalidPairCount(n_pairs));
    }
    Ok(total / n_pairs as f64)
}

/// Rounds half-up to two decimals for display; internals keep full precision.
pub fn round_to_cents(value: f64) -> f64 {
    (value * 100.0).round() / 100.0
}

/// Whitespace token count used for cost estimates when a backend does not
/// report exact usage.
pub fn count_tokens(text: &str) -> u64 {
    crate::note_store::whitespace_token_count(text) as u64
}

/// Serializable summary of one cost estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    /// Pricing mode the numbers come from, e.g. "self_hosted" or "api".
    pub method: String,
    pub total_cost: f64,
    pub per_pair_cost: f64,
    /// Estimated wall-clock hours; absent for API pricing, which has no
    /// throughput model.
    pub runtime_hours: Option<f64>,
    /// Inputs the estimate depends on (speeds, rates, token totals), as
    /// display strings.
    pub assumptions: BTreeMap<String, String>,
}

impl CostReport {
    /// Builds a report for self-hosted inference over `n_pairs` pairs.
    pub fn self_hosted(
        usage: TokenUsage,
        profile: &ThroughputProfile,
        n_pairs: u64,
    ) -> Result<CostReport, CostError> {
        let hours = runtime_hours(usage, profile)?;
        let total = hours * profile.hourly_rate;
        let mut assumptions = BTreeMap::new();
        assumptions.insert("input_tokens".into(), usage.input_tokens.to_string());
        assumptions.insert("output_tokens".into(), usage.output_tokens.to_string());
        assumptions.insert(
            "input_speed_tokens_per_sec".into(),
            format_number(profile.input_speed),
        );
        assumptions.insert(
            "output_speed_tokens_per_sec".into(),
            format_number(profile.output_speed),
        );
        assumptions.insert("hourly_rate".into(), format_number(profile.hourly_rate));
        assumptions.insert("n_pairs".into(), n_pairs.to_string());
        Ok(CostReport {
            method: "self_hosted".into(),
            total_cost: total,
            per_pair_cost: per_pair_cost(total, n_pairs)?,
            runtime_hours: Some(hours),
            assumptions,
        })
    }

    /// Builds a report for per-token API pricing over `n_pairs` pairs.
    pub fn api(
        usage: TokenUsage,
        pricing: &ApiPricing,
        n_pairs: u64,
    ) -> Result<CostReport, CostError> {
        let total = api_cost(usage, pricing)?;
        let mut assumptions = BTreeMap::new();
        assumptions.insert("input_tokens".into(), usage.input_tokens.to_string());
        assumptions.insert("output_tokens".into(), usage.output_tokens.to_string());
        assumptions.insert(
            "price_per_1k_in".into(),
            format_number(pricing.price_per_1k_in),
        );
        assumptions.insert(
            "price_per_1k_out".into(),
            format_number(pricing.price_per_1k_out),
        );
        assumptions.insert("n_pairs".into(), n_pairs.to_string());
        Ok(CostReport {
            method: "api".into(),
            total_cost: total,
            per_pair_cost: per_pair_cost(total, n_pairs)?,
            runtime_hours: None,
            assumptions,
        })
    }
}

fn format_number(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}
