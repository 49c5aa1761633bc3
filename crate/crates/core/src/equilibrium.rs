//! Grid search for the competitive prediction of each institution and a
//! unilateral-deviation check.

use serde::{Deserialize, Serialize};

use crate::agents::{consumer_expected_payoff, plan_decision, Objective};
use crate::config::MarketConfig;
use crate::market::{consumer_payoff, expert_margin, Decision, Institution, PriceBook, Problem};
use crate::money::Money;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub institution: Institution,
    /// `None` when no book induces entry.
    pub book: Option<PriceBook>,
    /// Range of `p_low` values that support the same outcome; the reported book pins the top.
    pub p_low_free: Option<(u32, u32)>,
    pub big_decision: Option<Decision>,
    pub small_decision: Option<Decision>,
    pub expert_behavior: String,
    /// Expected payoff of a trading consumer.
    pub consumer_payoff: Money,
    /// Expected expert margin per trade.
    pub expert_payoff: Money,
    pub total_income: Money,
    pub participation: f64,
}

/// Expected (consumer payoff, expert margin) of one trade at `book` with a
/// self-interested expert.
fn trade_values(book: PriceBook, config: &MarketConfig) -> (f64, f64, Decision, Decision) {
    let big = plan_decision(Objective::SelfInterested, Problem::Big, book, config.institution, config);
    let small = plan_decision(Objective::SelfInterested, Problem::Small, book, config.institution, config);
    let h = config.h_big;
    let consumer = h * consumer_payoff(Problem::Big, Some(big), config).as_f64()
        + (1.0 - h) * consumer_payoff(Problem::Small, Some(small), config).as_f64();
    let margin = h * expert_margin(big, config).as_f64() + (1.0 - h) * expert_margin(small, config).as_f64();
    (consumer, margin, big, small)
}

fn to_money(x: f64) -> Money {
    Money::from_milli((x * 1000.0).round() as i64)
}

fn describe(big: Decision, small: Decision, book: PriceBook) -> String {
    let name = |d: Decision| {
        let which = if book.is_degenerate() {
            "p"
        } else if d.charge == book.high {
            "p_high"
        } else {
            "p_low"
        };
        format!("{} at {} ({})", d.treatment, which, d.charge)
    };
    format!("big: {}; small: {}", name(big), name(small))
}

/// Competitive prediction: among books that attract consumers and leave
/// each expert strictly above the outside option, the one best for
/// consumers. Ties resolve to the highest `p_low`.
pub fn solve_prediction(config: &MarketConfig) -> Prediction {
    let outside = config.consumer_outside.as_f64();
    let sigma_e = config.expert_outside.as_f64();
    let per_expert = config.n_consumers as f64 / config.n_experts as f64;

    let candidates: Vec<(PriceBook, f64, f64, Decision, Decision)> = config
        .grid()
        .books()
        .filter(|&b| consumer_expected_payoff(b, config.institution, config) >= outside - EPS)
        .map(|b| {
            let (c, m, big, small) = trade_values(b, config);
            (b, c, m, big, small)
        })
        .filter(|&(_, _, m, _, _)| m * per_expert > sigma_e + EPS)
        .collect();

    let Some(best_c) = candidates.iter().map(|c| c.1).reduce(f64::max) else {
        let total =
            config.consumer_outside * config.n_consumers as i64 + config.expert_outside * config.n_experts as i64;
        return Prediction {
            institution: config.institution,
            book: None,
            p_low_free: None,
            big_decision: None,
            small_decision: None,
            expert_behavior: "market breaks down: no consumer enters".to_string(),
            consumer_payoff: config.consumer_outside,
            expert_payoff: config.expert_outside,
            total_income: total,
            participation: 0.0,
        };
    };

    let top: Vec<_> = candidates.iter().filter(|c| c.1 >= best_c - EPS).collect();
    let &&(book, consumer, margin, big, small) =
        top.iter().max_by_key(|c| (c.0.low, std::cmp::Reverse(c.0.high))).expect("non-empty");
    let same_high: Vec<u32> =
        top.iter().filter(|c| c.0.high == book.high && (c.2 - margin).abs() <= EPS).map(|c| c.0.low).collect();
    let p_low_free = Some((*same_high.iter().min().unwrap(), *same_high.iter().max().unwrap()));

    let consumer_m = to_money(consumer);
    let margin_m = to_money(margin);
    let idle = config.n_experts.saturating_sub(config.n_consumers) as i64;
    let total = (consumer_m + margin_m) * config.n_consumers as i64 + config.expert_outside * idle;
    Prediction {
        institution: config.institution,
        book: Some(book),
        p_low_free,
        big_decision: Some(big),
        small_decision: Some(small),
        expert_behavior: describe(big, small, book),
        consumer_payoff: consumer_m,
        expert_payoff: margin_m,
        total_income: total,
        participation: 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub book: PriceBook,
    pub payoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub book: PriceBook,
    pub equilibrium_payoff: f64,
    /// Deviations that strictly beat the symmetric payoff, best first.
    pub violations: Vec<Deviation>,
}

impl DeviationReport {
    pub fn is_equilibrium(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Expected payoff of each expert when consumers best-respond to `books`,
/// splitting evenly among tied offers.
pub fn expected_expert_payoffs(books: &[PriceBook], config: &MarketConfig) -> Vec<f64> {
    let offered: Vec<f64> = books.iter().map(|&b| consumer_expected_payoff(b, config.institution, config)).collect();
    let best = offered.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sigma_e = config.expert_outside.as_f64();
    if best < config.consumer_outside.as_f64() - EPS {
        return vec![sigma_e; books.len()];
    }
    let tied = offered.iter().filter(|&&v| v >= best - EPS).count() as f64;
    books
        .iter()
        .zip(&offered)
        .map(|(&b, &v)| {
            if v >= best - EPS {
                let (_, m, _, _) = trade_values(b, config);
                config.n_consumers as f64 / tied * m
            } else {
                sigma_e
            }
        })
        .collect()
}

/// Scans every unilateral deviation from the symmetric profile where all
/// experts post `book`.
pub fn verify_no_profitable_deviation(book: PriceBook, config: &MarketConfig) -> DeviationReport {
    let n = config.n_experts.max(1);
    let mut profile = vec![book; n];
    let equilibrium_payoff = expected_expert_payoffs(&profile, config)[0];
    let mut violations = Vec::new();
    for dev in config.grid().books() {
        if dev == book {
            continue;
        }
        profile[0] = dev;
        let payoff = expected_expert_payoffs(&profile, config)[0];
        if payoff > equilibrium_payoff + EPS {
            violations.push(Deviation { book: dev, payoff });
        }
    }
    violations.sort_by(|a, b| b.payoff.total_cmp(&a.payoff));
    DeviationReport { book, equilibrium_payoff, violations }
}
