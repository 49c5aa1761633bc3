use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::config::MarketConfig;
use crate::equilibrium::solve_prediction;
use crate::market::{
    consumer_payoff, expert_margin, legal_actions, Decision, ExpertPlan, Institution, PriceBook, Problem,
};
use crate::rng::StreamRng;

use super::{
    AgentError, Belief, ConsumerAgent, ConsumerView, ExpertAgent, ExpertView, Objective, OfferChoice, RivalBelief,
};

/// Tolerance for treating two expected values as tied.
const TIE_EPS: f64 = 1e-9;

fn pair_payoffs(problem: Problem, decision: Decision, config: &MarketConfig) -> (f64, f64) {
    (expert_margin(decision, config).as_f64(), consumer_payoff(problem, Some(decision), config).as_f64())
}

/// Utility-maximizing decision for one consumer. Ties go to the honest
/// treatment, then to the lower charge.
pub fn plan_decision(
    objective: Objective,
    problem: Problem,
    prices: PriceBook,
    institution: Institution,
    config: &MarketConfig,
) -> Decision {
    let mut best: Option<(f64, Decision)> = None;
    for d in legal_actions(institution, problem, prices) {
        let (e, c) = pair_payoffs(problem, d, config);
        let u = objective.utility(e, c);
        best = match best {
            None => Some((u, d)),
            Some((bu, bd)) => {
                let better = if u > bu + TIE_EPS {
                    true
                } else if u < bu - TIE_EPS {
                    false
                } else {
                    let (honest, best_honest) = (d.is_honest_treatment(problem), bd.is_honest_treatment(problem));
                    (honest && !best_honest) || (honest == best_honest && d.charge < bd.charge)
                };
                if better {
                    Some((u, d))
                } else {
                    Some((bu, bd))
                }
            }
        };
    }
    best.expect("legal action set is never empty").1
}

/// Expected consumer payoff from a book, assuming a self-interested expert.
pub fn consumer_expected_payoff(book: PriceBook, institution: Institution, config: &MarketConfig) -> f64 {
    let h = config.h_big;
    let v = config.value_solved.as_f64();
    let high = book.high as f64;
    let low = book.low as f64;
    match institution {
        // LCT at the high price, whatever the problem.
        Institution::NoInstitution => (1.0 - h) * (v - high) - h * high,
        Institution::Verifiability => {
            let hct_markup = high - config.cost_high.as_f64();
            let lct_markup = low - config.cost_low.as_f64();
            if hct_markup > lct_markup {
                v - high
            } else if hct_markup < lct_markup {
                (1.0 - h) * v - low
            } else {
                v - low - h * (high - low)
            }
        }
        Institution::Liability => v - high,
    }
}

/// Picks the offer with the best expected payoff, or exit when it falls
/// below the outside option. Indifferent consumers approach; ties among
/// offers are broken uniformly with `rng`.
pub fn best_response_choice<R: Rng>(
    offers: &[PriceBook],
    institution: Institution,
    config: &MarketConfig,
    rng: &mut R,
) -> Option<usize> {
    let payoffs: Vec<f64> = offers.iter().map(|&b| consumer_expected_payoff(b, institution, config)).collect();
    let best = payoffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if offers.is_empty() || best + TIE_EPS < config.consumer_outside.as_f64() {
        return None;
    }
    let tied: Vec<usize> = (0..offers.len()).filter(|&i| payoffs[i] >= best - TIE_EPS).collect();
    if tied.len() == 1 {
        Some(tied[0])
    } else {
        tied.choose(rng).copied()
    }
}

/// Expected utility of posting `book`, summed over all consumers.
///
/// A consumer who trades contributes the objective's utility of the trade
/// the expert would plan for each problem type. A consumer who does not
/// contributes the utility of the no-trade pair (0 for the expert, the
/// outside option for the consumer).
pub fn book_value(objective: Objective, belief: Belief, book: PriceBook, config: &MarketConfig) -> f64 {
    let institution = config.institution;
    let n_c = config.n_consumers as f64;
    let outside = config.consumer_outside.as_f64();
    let offered = consumer_expected_payoff(book, institution, config);

    let share = if offered + TIE_EPS < outside {
        0.0
    } else {
        match belief.rivals {
            RivalBelief::Isolated => n_c,
            RivalBelief::Equilibrium => match solve_prediction(config).book {
                Some(rival) => {
                    let r = consumer_expected_payoff(rival, institution, config);
                    if r + TIE_EPS < outside || offered > r + TIE_EPS {
                        n_c
                    } else if offered >= r - TIE_EPS {
                        n_c / config.n_experts as f64
                    } else {
                        0.0
                    }
                }
                None => n_c,
            },
        }
    };

    let h = config.h_big;
    let per_trade: f64 = [(Problem::Big, h), (Problem::Small, 1.0 - h)]
        .into_iter()
        .map(|(p, w)| {
            let d = plan_decision(objective, p, book, institution, config);
            let (e, c) = pair_payoffs(p, d, config);
            w * objective.utility(e, c)
        })
        .sum();
    let no_trade = objective.utility(0.0, outside);
    share * per_trade + (n_c - share) * no_trade
}

/// Best book on the grid; ties go to the lowest `p_high`, then the lowest `p_low`.
pub fn utility_book(objective: Objective, belief: Belief, config: &MarketConfig) -> PriceBook {
    let mut best: Option<(f64, PriceBook)> = None;
    for book in config.grid().books() {
        let v = book_value(objective, belief, book, config);
        match best {
            Some((bv, _)) if v <= bv + TIE_EPS => {}
            _ => best = Some((v, book)),
        }
    }
    best.expect("price grid is never empty").1
}

fn scripted_plan(objective: Objective, prices: PriceBook, problems: &[Problem], config: &MarketConfig) -> ExpertPlan {
    ExpertPlan {
        decisions: problems.iter().map(|&p| plan_decision(objective, p, prices, config.institution, config)).collect(),
    }
}

/// Plays the institution's predicted equilibrium.
pub struct EquilibriumExpert {
    config: Arc<MarketConfig>,
    book: Option<PriceBook>,
}

impl EquilibriumExpert {
    pub fn new(config: Arc<MarketConfig>) -> Self {
        EquilibriumExpert { config, book: None }
    }
}

impl ExpertAgent for EquilibriumExpert {
    fn post_prices(&mut self, _view: &ExpertView) -> Result<PriceBook, AgentError> {
        let config = &self.config;
        // A market that breaks down has no predicted book; post the ceiling.
        let book = *self.book.get_or_insert_with(|| {
            solve_prediction(config).book.unwrap_or(PriceBook { low: config.price_max, high: config.price_max })
        });
        Ok(book)
    }

    fn plan(&mut self, _view: &ExpertView, prices: PriceBook, problems: &[Problem]) -> Result<ExpertPlan, AgentError> {
        Ok(scripted_plan(Objective::SelfInterested, prices, problems, &self.config))
    }
}

/// Maximizes its objective against the best-response consumer model.
pub struct UtilityExpert {
    objective: Objective,
    belief: Belief,
    config: Arc<MarketConfig>,
    book: Option<PriceBook>,
}

impl UtilityExpert {
    pub fn new(objective: Objective, belief: Belief, config: Arc<MarketConfig>) -> Self {
        UtilityExpert { objective, belief, config, book: None }
    }
}

impl ExpertAgent for UtilityExpert {
    fn post_prices(&mut self, _view: &ExpertView) -> Result<PriceBook, AgentError> {
        let (objective, belief, config) = (self.objective, self.belief, &self.config);
        Ok(*self.book.get_or_insert_with(|| utility_book(objective, belief, config)))
    }

    fn plan(&mut self, _view: &ExpertView, prices: PriceBook, problems: &[Problem]) -> Result<ExpertPlan, AgentError> {
        Ok(scripted_plan(self.objective, prices, problems, &self.config))
    }
}

/// Uniformly random legal play; used for fuzzing.
pub struct RandomExpert {
    config: Arc<MarketConfig>,
    rng: StreamRng,
}

impl RandomExpert {
    pub fn new(config: Arc<MarketConfig>, rng: StreamRng) -> Self {
        RandomExpert { config, rng }
    }
}

impl ExpertAgent for RandomExpert {
    fn post_prices(&mut self, _view: &ExpertView) -> Result<PriceBook, AgentError> {
        let books: Vec<PriceBook> = self.config.grid().books().collect();
        Ok(*books.choose(&mut self.rng).expect("price grid is never empty"))
    }

    fn plan(&mut self, _view: &ExpertView, prices: PriceBook, problems: &[Problem]) -> Result<ExpertPlan, AgentError> {
        let decisions = problems
            .iter()
            .map(|&p| {
                let legal = legal_actions(self.config.institution, p, prices);
                *legal.choose(&mut self.rng).expect("legal action set is never empty")
            })
            .collect();
        Ok(ExpertPlan { decisions })
    }
}

pub struct BestResponseConsumer {
    config: Arc<MarketConfig>,
}

impl BestResponseConsumer {
    pub fn new(config: Arc<MarketConfig>) -> Self {
        BestResponseConsumer { config }
    }
}

impl ConsumerAgent for BestResponseConsumer {
    fn choose(&mut self, view: &ConsumerView, tie_break: &mut StreamRng) -> Result<OfferChoice, AgentError> {
        let books: Vec<PriceBook> = view.offers.iter().map(|o| o.book).collect();
        Ok(match best_response_choice(&books, view.institution, &self.config, tie_break) {
            Some(slot) => OfferChoice::Slot(slot),
            None => OfferChoice::Exit,
        })
    }
}

pub struct RandomConsumer {
    rng: StreamRng,
}

impl RandomConsumer {
    pub fn new(rng: StreamRng) -> Self {
        RandomConsumer { rng }
    }
}

impl ConsumerAgent for RandomConsumer {
    fn choose(&mut self, view: &ConsumerView, _tie_break: &mut StreamRng) -> Result<OfferChoice, AgentError> {
        let pick = self.rng.random_range(0..=view.offers.len());
        Ok(if pick == view.offers.len() { OfferChoice::Exit } else { OfferChoice::Slot(pick) })
    }
}
