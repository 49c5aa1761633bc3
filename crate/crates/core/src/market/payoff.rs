use crate::config::MarketConfig;
use crate::money::Money;

use super::{Decision, Problem};

/// Consumer income for one round. `None` means the consumer left the market.
pub fn consumer_payoff(problem: Problem, decision: Option<Decision>, config: &MarketConfig) -> Money {
    match decision {
        None => config.consumer_outside,
        Some(d) => {
            let gross = if d.treatment.solves(problem) { config.value_solved } else { Money::ZERO };
            gross - Money::from(d.charge)
        }
    }
}

/// What the expert keeps from one trade.
pub fn expert_margin(decision: Decision, config: &MarketConfig) -> Money {
    Money::from(decision.charge) - config.cost(decision.treatment)
}

/// Expert income for one round from the decisions actually executed.
pub fn expert_payoff(trades: &[Decision], config: &MarketConfig) -> Money {
    if trades.is_empty() {
        return config.expert_outside;
    }
    trades.iter().map(|&d| expert_margin(d, config)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::Treatment::{Hct, Lct};

    #[test]
    fn consumer_payoffs() {
        let c = MarketConfig::default();
        assert_eq!(consumer_payoff(Problem::Big, Some(Decision::new(Hct, 7)), &c), Money::from_units(3));
        assert_eq!(consumer_payoff(Problem::Big, Some(Decision::new(Lct, 7)), &c), Money::from_units(-7));
        assert_eq!(consumer_payoff(Problem::Small, None, &c), Money::from_milli(1600));
        assert_eq!(consumer_payoff(Problem::Small, Some(Decision::new(Hct, 7)), &c), Money::from_units(3));
    }

    #[test]
    fn expert_payoffs() {
        let c = MarketConfig::default();
        assert_eq!(expert_payoff(&[Decision::new(Hct, 7), Decision::new(Lct, 3)], &c), Money::from_units(2));
        assert_eq!(expert_payoff(&[], &c), Money::ZERO);
        assert_eq!(expert_payoff(&[Decision::new(Hct, 2)], &c), Money::from_units(-4));
        let human = c.human_comparison();
        assert_eq!(expert_payoff(&[], &human), Money::from_milli(1600));
    }
}
