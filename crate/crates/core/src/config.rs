//! Market parameters and their validation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentKind, AgentSpec};
use crate::market::{Institution, PriceGrid};
use crate::money::Money;

/// Upper bound on experts per market; the no-reputation label pool has this many entries.
pub const MAX_EXPERTS: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketConfig {
    pub n_experts: usize,
    pub n_consumers: usize,
    pub rounds: u32,
    pub h_big: f64,
    pub value_solved: Money,
    pub consumer_outside: Money,
    pub expert_outside: Money,
    pub cost_high: Money,
    pub cost_low: Money,
    pub price_min: u32,
    pub price_max: u32,
    pub institution: Institution,
    pub reputation: bool,
    pub seed: u64,
    pub experts: Vec<AgentSpec>,
    pub consumers: Vec<AgentSpec>,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            n_experts: 4,
            n_consumers: 4,
            rounds: 1,
            h_big: 0.5,
            value_solved: Money::from_units(10),
            consumer_outside: Money::from_milli(1600),
            expert_outside: Money::ZERO,
            cost_high: Money::from_units(6),
            cost_low: Money::from_units(2),
            price_min: 1,
            price_max: 11,
            institution: Institution::NoInstitution,
            reputation: false,
            seed: 0,
            experts: vec![AgentSpec::default(); 4],
            consumers: vec![AgentSpec::default(); 4],
        }
    }
}

impl MarketConfig {
    /// Experts also hold the 1.6 outside option, as in the human-subject benchmark.
    pub fn human_comparison(mut self) -> Self {
        self.expert_outside = Money::from_milli(1600);
        self
    }

    pub fn grid(&self) -> PriceGrid {
        PriceGrid { min: self.price_min, max: self.price_max }
    }

    pub fn cost(&self, treatment: crate::market::Treatment) -> Money {
        match treatment {
            crate::market::Treatment::Hct => self.cost_high,
            crate::market::Treatment::Lct => self.cost_low,
        }
    }

    /// Total income when nobody trades.
    pub fn baseline_income(&self) -> Money {
        self.consumer_outside * self.n_consumers as i64 + self.expert_outside * self.n_experts as i64
    }

    /// Expected total income per period when every consumer trades and is treated honestly.
    pub fn max_expected_income(&self) -> f64 {
        let honest_cost = self.h_big * self.cost_high.as_f64() + (1.0 - self.h_big) * self.cost_low.as_f64();
        self.n_consumers as f64 * (self.value_solved.as_f64() - honest_cost)
    }

    /// Resizes agent lists to match the market size, repeating the first spec.
    pub fn with_uniform_agents(mut self, expert: AgentSpec, consumer: AgentSpec) -> Self {
        self.experts = vec![expert; self.n_experts];
        self.consumers = vec![consumer; self.n_consumers];
        self
    }

    pub fn uses_llm(&self) -> bool {
        self.experts.iter().chain(&self.consumers).any(|a| a.kind == AgentKind::Llm)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_experts == 0 || self.n_experts > MAX_EXPERTS {
            return Err(invalid("n_experts", format!("must be in 1..={MAX_EXPERTS}")));
        }
        if self.n_consumers == 0 {
            return Err(invalid("n_consumers", "must be at least 1"));
        }
        if self.rounds == 0 {
            return Err(invalid("rounds", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.h_big) || !self.h_big.is_finite() {
            return Err(invalid("h_big", "must be a probability in [0, 1]"));
        }
        if self.cost_low >= self.cost_high {
            return Err(invalid("cost_low", "must be strictly below cost_high"));
        }
        if self.price_min > self.price_max {
            return Err(invalid("price_min", "must not exceed price_max"));
        }
        if self.experts.len() != self.n_experts {
            return Err(invalid(
                "experts",
                format!("expected {} agent specs, found {}", self.n_experts, self.experts.len()),
            ));
        }
        if self.consumers.len() != self.n_consumers {
            return Err(invalid(
                "consumers",
                format!("expected {} agent specs, found {}", self.n_consumers, self.consumers.len()),
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_standard_market() {
        let c = MarketConfig::default();
        c.validate().unwrap();
        assert_eq!(c.baseline_income(), Money::from_milli(6400));
        assert_eq!(c.max_expected_income(), 24.0);
        assert_eq!(c.clone().human_comparison().baseline_income(), Money::from_milli(12800));
        assert_eq!(c.grid().len(), 66);
    }

    #[test]
    fn rejects_inverted_costs_and_prices() {
        let c = MarketConfig { cost_low: Money::from_units(7), ..Default::default() };
        assert!(matches!(c.validate(), Err(ConfigError::Invalid { field: "cost_low", .. })));
        let c = MarketConfig { price_min: 5, price_max: 4, ..Default::default() };
        assert!(matches!(c.validate(), Err(ConfigError::Invalid { field: "price_min", .. })));
        let c = MarketConfig { h_big: 1.5, ..Default::default() };
        assert!(c.validate().is_err());
        let c = MarketConfig { rounds: 0, ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_uses_defaults_and_rejects_unknown_fields() {
        let c: MarketConfig = serde_json::from_str(r#"{"institution":"liability","rounds":16}"#).unwrap();
        assert_eq!(c.institution, Institution::Liability);
        assert_eq!(c.consumer_outside, Money::from_milli(1600));
        assert!(serde_json::from_str::<MarketConfig>(r#"{"bogus":1}"#).is_err());
        assert!(serde_json::from_str::<MarketConfig>(r#"{"value_solved":1e400}"#).is_err());
    }
}
