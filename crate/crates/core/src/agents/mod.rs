//! Agent interface and scripted agents.
//!
//! Experts post a price book, then plan a decision for every consumer before
//! approaches are known (strategy method). Consumers see the displayed books
//! and pick a slot or leave. Agents only see their own history.

mod objective;
mod scripted;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::{Bridge, BridgeError, LlmConsumer, LlmExpert};
use crate::config::MarketConfig;
use crate::market::{ExpertPlan, Institution, PriceBook, Problem};
use crate::money::Money;
use crate::rng::{Purpose, RngTree, StreamRng};

pub use objective::Objective;
pub use scripted::{
    best_response_choice, book_value, consumer_expected_payoff, plan_decision, utility_book, BestResponseConsumer,
    EquilibriumExpert, RandomConsumer, RandomExpert, UtilityExpert,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    #[default]
    Equilibrium,
    Utility,
    Llm,
    Random,
}

impl std::str::FromStr for AgentKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "equilibrium" => Ok(AgentKind::Equilibrium),
            "utility" => Ok(AgentKind::Utility),
            "llm" => Ok(AgentKind::Llm),
            "random" => Ok(AgentKind::Random),
            other => Err(format!("unknown agent kind `{other}`")),
        }
    }
}

/// What a utility expert assumes about rival books when pricing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RivalBelief {
    /// Consumers compare the book only against their outside option.
    #[default]
    Isolated,
    /// Rivals post the institution's predicted book; ties split consumers evenly.
    Equilibrium,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Belief {
    pub rivals: RivalBelief,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSpec {
    pub kind: AgentKind,
    pub objective: Objective,
    pub belief: Belief,
}

impl AgentSpec {
    pub fn new(kind: AgentKind, objective: Objective) -> Self {
        AgentSpec { kind, objective, belief: Belief::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisplayedOffer {
    pub label: String,
    pub book: PriceBook,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertHistoryEntry {
    pub round: u32,
    pub prices: PriceBook,
    pub consumers_attracted: usize,
    pub payoff: Money,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsumerHistoryEntry {
    pub round: u32,
    pub offers: Vec<DisplayedOffer>,
    /// Label of the approached expert as displayed that round; `None` when the consumer left.
    pub approached: Option<String>,
    pub payoff: Money,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpertView {
    pub expert: usize,
    pub round: u32,
    pub rounds: u32,
    pub institution: Institution,
    pub reputation: bool,
    pub history: Vec<ExpertHistoryEntry>,
}

/// Under no reputation the offers carry only that round's random labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsumerView {
    pub consumer: usize,
    pub round: u32,
    pub rounds: u32,
    pub institution: Institution,
    pub reputation: bool,
    pub offers: Vec<DisplayedOffer>,
    pub history: Vec<ConsumerHistoryEntry>,
}

/// A consumer's answer, in terms of display slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfferChoice {
    Slot(usize),
    Exit,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Bridge(Box<BridgeError>),
    #[error("{role} {index} is an llm agent but no language-model bridge is configured")]
    MissingBridge { role: &'static str, index: usize },
    #[error("agent returned unusable output: {0}")]
    Invalid(String),
}

pub trait ExpertAgent: Send {
    fn post_prices(&mut self, view: &ExpertView) -> Result<PriceBook, AgentError>;

    fn plan(&mut self, view: &ExpertView, prices: PriceBook, problems: &[Problem]) -> Result<ExpertPlan, AgentError>;

    /// Answers to the comprehension questions, if the agent takes them.
    fn comprehension(&mut self, _view: &ExpertView) -> Result<Option<String>, AgentError> {
        Ok(None)
    }

    /// Remote agents are driven concurrently within a stage.
    fn is_remote(&self) -> bool {
        false
    }
}

pub trait ConsumerAgent: Send {
    fn choose(&mut self, view: &ConsumerView, tie_break: &mut StreamRng) -> Result<OfferChoice, AgentError>;

    fn comprehension(&mut self, _view: &ConsumerView) -> Result<Option<String>, AgentError> {
        Ok(None)
    }

    fn is_remote(&self) -> bool {
        false
    }
}

impl From<BridgeError> for AgentError {
    fn from(e: BridgeError) -> Self {
        AgentError::Bridge(Box::new(e))
    }
}

pub struct AgentSet {
    pub experts: Vec<Box<dyn ExpertAgent>>,
    pub consumers: Vec<Box<dyn ConsumerAgent>>,
}

/// Instantiates the agents named in `config` for one run.
pub fn build_agents(config: &MarketConfig, run: u32, bridge: Option<&Arc<Bridge>>) -> Result<AgentSet, AgentError> {
    let tree = RngTree::new(config.seed);
    let shared = Arc::new(config.clone());
    let mut experts: Vec<Box<dyn ExpertAgent>> = Vec::with_capacity(config.n_experts);
    for (i, spec) in config.experts.iter().enumerate() {
        experts.push(match spec.kind {
            AgentKind::Equilibrium => Box::new(EquilibriumExpert::new(shared.clone())),
            AgentKind::Utility => Box::new(UtilityExpert::new(spec.objective, spec.belief, shared.clone())),
            AgentKind::Random => {
                Box::new(RandomExpert::new(shared.clone(), tree.stream(run, 0, Purpose::ExpertAgent, i as u64)))
            }
            AgentKind::Llm => {
                let bridge = bridge.ok_or(AgentError::MissingBridge { role: "expert", index: i })?;
                Box::new(LlmExpert::new(bridge.clone(), shared.clone(), run, i, spec.objective))
            }
        });
    }
    let mut consumers: Vec<Box<dyn ConsumerAgent>> = Vec::with_capacity(config.n_consumers);
    for (i, spec) in config.consumers.iter().enumerate() {
        consumers.push(match spec.kind {
            AgentKind::Equilibrium | AgentKind::Utility => Box::new(BestResponseConsumer::new(shared.clone())),
            AgentKind::Random => Box::new(RandomConsumer::new(tree.stream(run, 0, Purpose::ConsumerAgent, i as u64))),
            AgentKind::Llm => {
                let bridge = bridge.ok_or(AgentError::MissingBridge { role: "consumer", index: i })?;
                Box::new(LlmConsumer::new(bridge.clone(), shared.clone(), run, i, spec.objective))
            }
        });
    }
    Ok(AgentSet { experts, consumers })
}
