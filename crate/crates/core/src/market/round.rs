use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::Objective;
use crate::config::MarketConfig;
use crate::money::Money;

use super::payoff::{consumer_payoff, expert_margin};
use super::rules::classify_fraud;
use super::{ConsumerChoice, Decision, ExpertPlan, FraudFlags, Institution, MarketError, PriceBook, Problem};

/// Neutral, non-enumerated labels used when experts must not be identifiable.
pub const ANONYMOUS_LABELS: [&str; crate::config::MAX_EXPERTS] = [
    "Player A-Red",
    "Player A-Blue",
    "Player A-Green",
    "Player A-Yellow",
    "Player A-Orange",
    "Player A-Purple",
    "Player A-Brown",
    "Player A-Grey",
    "Player A-Pink",
    "Player A-Teal",
    "Player A-Olive",
    "Player A-Navy",
];

/// How experts are presented to consumers in one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPermutation {
    /// `labels[expert]` is the name shown for that expert.
    pub labels: Vec<String>,
    /// `display_order[slot]` is the expert listed at that position.
    pub display_order: Vec<usize>,
}

impl LabelPermutation {
    pub fn identity(n_experts: usize) -> Self {
        LabelPermutation {
            labels: (1..=n_experts).map(|i| format!("Player A{i}")).collect(),
            display_order: (0..n_experts).collect(),
        }
    }

    pub fn expert_at_slot(&self, slot: usize) -> Option<usize> {
        self.display_order.get(slot).copied()
    }

    pub fn expert_with_label(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Index of the label assignment among all label permutations of the pool prefix.
    pub fn label_assignment(&self) -> Vec<usize> {
        self.labels.iter().map(|l| ANONYMOUS_LABELS.iter().position(|a| a == l).unwrap_or(usize::MAX)).collect()
    }
}

/// Lehmer rank of a permutation of `0..n`, in `0..n!`.
pub fn permutation_rank(perm: &[usize]) -> usize {
    let n = perm.len();
    let mut rank = 0;
    for i in 0..n {
        let smaller = perm[i + 1..].iter().filter(|&&x| x < perm[i]).count();
        rank = rank * (n - i) + smaller;
    }
    rank
}

pub fn draw_problems<R: Rng>(rng: &mut R, n_consumers: usize, h_big: f64) -> Vec<Problem> {
    (0..n_consumers).map(|_| if rng.random_bool(h_big) { Problem::Big } else { Problem::Small }).collect()
}

pub fn make_label_permutation<R: Rng>(rng: &mut R, reputation: bool, n_experts: usize) -> LabelPermutation {
    if reputation {
        return LabelPermutation::identity(n_experts);
    }
    let mut pool: Vec<usize> = (0..n_experts).collect();
    pool.shuffle(rng);
    let mut order: Vec<usize> = (0..n_experts).collect();
    order.shuffle(rng);
    LabelPermutation {
        labels: pool.into_iter().map(|i| ANONYMOUS_LABELS[i].to_string()).collect(),
        display_order: order,
    }
}

/// Treatment condition stamped on every record so logs are self-describing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Condition {
    pub institution: Institution,
    pub reputation: bool,
    pub rounds: u32,
    pub expert_objectives: Vec<Objective>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trade {
    pub consumer: usize,
    pub expert: usize,
    pub decision: Decision,
    pub fraud: FraudFlags,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub run: u32,
    pub round: u32,
    pub condition: Condition,
    pub problems: Vec<Problem>,
    pub price_books: Vec<PriceBook>,
    pub plans: Vec<ExpertPlan>,
    pub choices: Vec<ConsumerChoice>,
    pub trades: Vec<Trade>,
    pub consumer_payoffs: Vec<Money>,
    pub expert_payoffs: Vec<Money>,
    /// `[expert][consumer]`, over every plan cell.
    pub fraud_intended: Vec<Vec<FraudFlags>>,
    pub label_permutation: LabelPermutation,
}

impl RoundRecord {
    pub fn total_income(&self) -> Money {
        self.consumer_payoffs.iter().chain(&self.expert_payoffs).copied().sum()
    }

    pub fn consumers_of(&self, expert: usize) -> usize {
        self.choices.iter().filter(|c| c.expert() == Some(expert)).count()
    }
}

#[derive(Debug, Clone)]
pub struct RoundInputs {
    pub run: u32,
    pub round: u32,
    pub condition: Condition,
    pub problems: Vec<Problem>,
    pub price_books: Vec<PriceBook>,
    pub plans: Vec<ExpertPlan>,
    pub choices: Vec<ConsumerChoice>,
    pub label_permutation: LabelPermutation,
}

/// Settles one round. Illegal plans and dangling expert ids are rejected, never repaired.
pub fn resolve_round(inputs: RoundInputs, config: &MarketConfig) -> Result<RoundRecord, MarketError> {
    let n_e = config.n_experts;
    let n_c = config.n_consumers;
    let shape = |what: &'static str, expected: usize, found: usize| {
        if expected == found {
            Ok(())
        } else {
            Err(MarketError::Shape { what, expected, found })
        }
    };
    shape("problems", n_c, inputs.problems.len())?;
    shape("price_books", n_e, inputs.price_books.len())?;
    shape("plans", n_e, inputs.plans.len())?;
    shape("choices", n_c, inputs.choices.len())?;

    let institution = config.institution;
    let mut fraud_intended = Vec::with_capacity(n_e);
    for (expert, (plan, book)) in inputs.plans.iter().zip(&inputs.price_books).enumerate() {
        book.validate(config.grid())?;
        shape("plan decisions", n_c, plan.decisions.len())?;
        let row = plan
            .decisions
            .iter()
            .zip(&inputs.problems)
            .enumerate()
            .map(|(consumer, (&d, &p))| {
                classify_fraud(institution, p, d, *book).map_err(|e| MarketError::IllegalPlan {
                    expert,
                    consumer,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        fraud_intended.push(row);
    }

    let mut trades = Vec::new();
    let mut consumer_payoffs = Vec::with_capacity(n_c);
    for (consumer, choice) in inputs.choices.iter().enumerate() {
        let problem = inputs.problems[consumer];
        match *choice {
            ConsumerChoice::Exit => consumer_payoffs.push(consumer_payoff(problem, None, config)),
            ConsumerChoice::Approach(expert) => {
                if expert >= n_e {
                    return Err(MarketError::UnknownExpert { consumer, expert });
                }
                let decision = inputs.plans[expert].decisions[consumer];
                trades.push(Trade { consumer, expert, decision, fraud: fraud_intended[expert][consumer] });
                consumer_payoffs.push(consumer_payoff(problem, Some(decision), config));
            }
        }
    }

    let expert_payoffs = (0..n_e)
        .map(|e| {
            let mine: Vec<Money> =
                trades.iter().filter(|t| t.expert == e).map(|t| expert_margin(t.decision, config)).collect();
            if mine.is_empty() {
                config.expert_outside
            } else {
                mine.into_iter().sum()
            }
        })
        .collect();

    Ok(RoundRecord {
        run: inputs.run,
        round: inputs.round,
        condition: inputs.condition,
        problems: inputs.problems,
        price_books: inputs.price_books,
        plans: inputs.plans,
        choices: inputs.choices,
        trades,
        consumer_payoffs,
        expert_payoffs,
        fraud_intended,
        label_permutation: inputs.label_permutation,
    })
}
