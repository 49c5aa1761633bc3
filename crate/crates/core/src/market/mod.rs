//! Game types, institutional rules, payoffs and round settlement.

mod payoff;
mod round;
mod rules;
mod types;

use thiserror::Error;

pub use payoff::{consumer_payoff, expert_margin, expert_payoff};
pub use round::{
    draw_problems, make_label_permutation, permutation_rank, resolve_round, Condition, LabelPermutation, RoundInputs,
    RoundRecord, Trade, ANONYMOUS_LABELS,
};
pub use rules::{check_legal, classify_fraud, legal_actions};
pub use types::{
    ConsumerChoice, Decision, ExpertPlan, FraudFlags, Institution, PriceBook, PriceGrid, Problem, Treatment,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("rule violation: {rule}")]
    RuleViolation { rule: String },
    #[error("price book {{{low},{high}}} is invalid on grid {min}..={max} (need min <= p_low <= p_high <= max)")]
    InvalidPriceBook { low: u32, high: u32, min: u32, max: u32 },
    #[error("expert {expert} planned an illegal decision for consumer {consumer}: {source}")]
    IllegalPlan {
        expert: usize,
        consumer: usize,
        #[source]
        source: Box<MarketError>,
    },
    #[error("protocol error: consumer {consumer} approached unknown expert {expert}")]
    UnknownExpert { consumer: usize, expert: usize },
    #[error("expected {expected} {what}, found {found}")]
    Shape { what: &'static str, expected: usize, found: usize },
}
