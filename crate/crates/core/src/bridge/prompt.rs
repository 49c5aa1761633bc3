use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{ConsumerView, ExpertView, Objective};
use crate::config::MarketConfig;
use crate::market::{legal_actions, Institution, PriceBook, Problem};

use super::BridgeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    Comprehension,
    PriceBook,
    Decision,
    ConsumerChoice,
}

/// One protocol step. Plan decisions are asked one consumer at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Comprehension,
    Prices,
    PlanDecision { prices: PriceBook, consumer: usize, problem: Problem },
    Approach,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Comprehension => "comprehension",
            Stage::Prices => "prices",
            Stage::PlanDecision { .. } => "plan_decision",
            Stage::Approach => "approach",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum AgentViewRef<'a> {
    Expert(&'a ExpertView),
    Consumer(&'a ConsumerView),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_preamble: String,
    pub objective_text: String,
    pub history_block: String,
    pub question_text: String,
    pub schema: SchemaId,
}

impl PromptBundle {
    /// The user message: non-empty parts separated by blank lines.
    pub fn user_text(&self) -> String {
        [&self.user_preamble, &self.objective_text, &self.history_block, &self.question_text]
            .into_iter()
            .filter(|s| !s.is_empty())
            .map(|s| s.trim_end())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub expert_system: String,
    pub consumer_system: String,
    pub preamble: String,
    pub comprehension: String,
    pub prices: String,
    pub plan_decision: String,
    pub approach: String,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            expert_system: include_str!("../../templates/expert_system.txt").to_string(),
            consumer_system: include_str!("../../templates/consumer_system.txt").to_string(),
            preamble: include_str!("../../templates/preamble.txt").to_string(),
            comprehension: include_str!("../../templates/comprehension.txt").to_string(),
            prices: include_str!("../../templates/prices.txt").to_string(),
            plan_decision: include_str!("../../templates/plan_decision.txt").to_string(),
            approach: include_str!("../../templates/approach.txt").to_string(),
        }
    }
}

impl Templates {
    /// Loads `<name>.txt` files from `dir`; files that are absent keep the built-in text.
    pub fn from_dir(dir: &Path) -> Result<Self, BridgeError> {
        let mut t = Templates::default();
        let slots: [(&str, &mut String); 7] = [
            ("expert_system", &mut t.expert_system),
            ("consumer_system", &mut t.consumer_system),
            ("preamble", &mut t.preamble),
            ("comprehension", &mut t.comprehension),
            ("prices", &mut t.prices),
            ("plan_decision", &mut t.plan_decision),
            ("approach", &mut t.approach),
        ];
        for (name, slot) in slots {
            let path = dir.join(format!("{name}.txt"));
            match std::fs::read_to_string(&path) {
                Ok(text) => *slot = text,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(source) => return Err(BridgeError::Template { path, source }),
            }
        }
        Ok(t)
    }
}

/// Substitutes `{{name}}` placeholders. Every placeholder must have a value.
pub fn fill(template_name: &str, template: &str, vars: &BTreeMap<&str, String>) -> Result<String, BridgeError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after.find("}}").ok_or_else(|| BridgeError::Render {
            template: template_name.to_string(),
            field: "unterminated placeholder".to_string(),
        })?;
        let name = after[..end].trim();
        let value = vars
            .get(name)
            .ok_or_else(|| BridgeError::Render { template: template_name.to_string(), field: name.to_string() })?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

fn institution_rules(institution: Institution) -> &'static str {
    match institution {
        Institution::NoInstitution => {
            "Player A may provide either treatment for either problem and may charge either price, whatever treatment is provided."
        }
        Institution::Verifiability => {
            "Player A must charge the price of the treatment provided: p_low for the LCT and p_high for the HCT."
        }
        Institution::Liability => {
            "Player A must solve the problem of every Player B who approaches: a big problem always receives the HCT. Player A may charge either price."
        }
    }
}

fn horizon_rules(config: &MarketConfig) -> String {
    let mut s = if config.rounds == 1 {
        "The game lasts one round.".to_string()
    } else {
        format!("The game lasts {} rounds with the same players.", config.rounds)
    };
    s.push(' ');
    s.push_str(if config.reputation {
        "Every Player A keeps the same name and position in every round."
    } else {
        "The names and positions of Player A are reassigned at random in every round."
    });
    s
}

/// Horizon framing and, for experts, the legal-obligation sentence.
fn framing(config: &MarketConfig, expert: bool) -> String {
    let mut s = if config.rounds == 1 {
        "Remember that this is a one-shot game, there are no future interactions or future visits.".to_string()
    } else {
        format!("Remember that this game has {} rounds with the same composition of players.", config.rounds)
    };
    if expert {
        s.push(' ');
        s.push_str(if config.institution == Institution::Liability {
            "You are legally obligated to solve the problem of any Player B who approaches you."
        } else {
            "You are not legally obligated to solve the problem of any Player B who approaches you."
        });
    }
    s
}

/// Objective prompt; empty for the default objective.
pub fn objective_text(objective: Objective, rounds: u32, expert: bool) -> String {
    let other = if expert { "Player B" } else { "Player A" };
    let sentence = match objective {
        Objective::Default => return String::new(),
        Objective::SelfInterested if rounds == 1 => {
            "Your only objective is to maximize your own payoff in this 1 round".to_string()
        }
        Objective::SelfInterested => {
            format!("Your only objective is to maximize your own payoff in these {rounds} rounds")
        }
        Objective::InequityAverse => format!("You only care about fairness between yourself and {other}"),
        Objective::EfficiencyLoving => {
            format!("Your only objective is to maximize the total payoff of yourself and {other}")
        }
    };
    format!("{sentence}. Think about this objective when making your choices.")
}

fn money(m: crate::money::Money) -> String {
    m.to_string()
}

fn base_vars(config: &MarketConfig) -> BTreeMap<&'static str, String> {
    let mut v = BTreeMap::new();
    let n_e = config.n_experts;
    let n_c = config.n_consumers;
    v.insert("n_others", (n_e + n_c - 1).to_string());
    v.insert("n_experts", n_e.to_string());
    v.insert("n_consumers", n_c.to_string());
    v.insert("n_rival_experts", n_e.saturating_sub(1).to_string());
    v.insert("n_rival_consumers", n_c.saturating_sub(1).to_string());
    v.insert("h_big", format!("{}", config.h_big));
    v.insert("cost_high", money(config.cost_high));
    v.insert("cost_low", money(config.cost_low));
    v.insert("value_solved", money(config.value_solved));
    v.insert("consumer_outside", money(config.consumer_outside));
    v.insert("expert_outside", money(config.expert_outside));
    v.insert("price_min", config.price_min.to_string());
    v.insert("price_max", config.price_max.to_string());
    v.insert("rounds", config.rounds.to_string());
    v.insert("institution_rules", institution_rules(config.institution).to_string());
    v.insert("horizon_rules", horizon_rules(config));
    v
}

fn expert_history(view: &ExpertView) -> String {
    if view.history.is_empty() {
        return String::new();
    }
    let mut s = String::from("Your history so far:");
    for h in &view.history {
        let _ = write!(
            s,
            "\nRound {}: your prices p_low = {}, p_high = {}; Player B who approached you: {}; your payoff: {}",
            h.round, h.prices.low, h.prices.high, h.consumers_attracted, h.payoff
        );
    }
    s
}

fn offers_line(offers: &[crate::agents::DisplayedOffer]) -> String {
    offers
        .iter()
        .map(|o| format!("{} (p_low {}, p_high {})", o.label, o.book.low, o.book.high))
        .collect::<Vec<_>>()
        .join(", ")
}

fn consumer_history(view: &ConsumerView) -> String {
    if view.history.is_empty() {
        return String::new();
    }
    let mut s = String::from("Your history so far:");
    for h in &view.history {
        let action = match &h.approached {
            Some(label) => format!("you approached {label}"),
            None => "you left the market".to_string(),
        };
        let _ =
            write!(s, "\nRound {}: prices {}; {}; your payoff: {}", h.round, offers_line(&h.offers), action, h.payoff);
    }
    s
}

fn expert_questions() -> &'static str {
    "1. A Player B with a small problem approaches you. You provide the LCT and charge p_high. What do you earn and what does Player B earn?\n\
     2. A Player B with a big problem approaches you. You provide the LCT. Is the problem solved?\n\
     3. What do you earn in a round in which no Player B approaches you?"
}

fn consumer_questions() -> &'static str {
    "1. You have a big problem and Player A provides the LCT and charges p_low. What do you earn?\n\
     2. You have a small problem and Player A provides the HCT and charges p_high. What do you earn?\n\
     3. What do you earn if you leave the market?"
}

fn mismatch(stage: &Stage, role: &str) -> BridgeError {
    BridgeError::Render { template: stage.name().to_string(), field: format!("{role} view") }
}

/// Builds the full prompt for one agent at one stage. Output depends only on
/// the inputs.
pub fn render_prompt(
    templates: &Templates,
    stage: Stage,
    view: AgentViewRef<'_>,
    objective: Objective,
    config: &MarketConfig,
) -> Result<PromptBundle, BridgeError> {
    let mut vars = base_vars(config);
    let preamble = templates.preamble.trim_end().to_string();
    match view {
        AgentViewRef::Expert(v) => {
            vars.insert("round", v.round.to_string());
            vars.insert("rounds", v.rounds.to_string());
            let (template_name, template, schema) = match stage {
                Stage::Comprehension => {
                    vars.insert("questions", expert_questions().to_string());
                    ("comprehension", &templates.comprehension, SchemaId::Comprehension)
                }
                Stage::Prices => {
                    let allowed: Vec<_> =
                        config.grid().books().map(|b| serde_json::json!({"p_low": b.low, "p_high": b.high})).collect();
                    vars.insert("allowed", serde_json::to_string(&allowed).expect("serializable"));
                    ("prices", &templates.prices, SchemaId::PriceBook)
                }
                Stage::PlanDecision { prices, consumer, problem } => {
                    let allowed: Vec<_> = legal_actions(config.institution, problem, prices)
                        .into_iter()
                        .map(|d| serde_json::json!({"treatment": d.treatment.to_string(), "charge": d.charge}))
                        .collect();
                    vars.insert("allowed", serde_json::to_string(&allowed).expect("serializable"));
                    vars.insert("p_low", prices.low.to_string());
                    vars.insert("p_high", prices.high.to_string());
                    vars.insert("consumer", format!("Player B{}", consumer + 1));
                    vars.insert(
                        "problem",
                        match problem {
                            Problem::Big => "big",
                            Problem::Small => "small",
                        }
                        .to_string(),
                    );
                    ("plan_decision", &templates.plan_decision, SchemaId::Decision)
                }
                Stage::Approach => return Err(mismatch(&stage, "consumer")),
            };
            Ok(PromptBundle {
                system_text: fill("expert_system", &templates.expert_system, &vars)?,
                user_preamble: format!("{preamble}\n{}", framing(config, true)),
                objective_text: objective_text(objective, config.rounds, true),
                history_block: expert_history(v),
                question_text: fill(template_name, template, &vars)?,
                schema,
            })
        }
        AgentViewRef::Consumer(v) => {
            vars.insert("round", v.round.to_string());
            vars.insert("rounds", v.rounds.to_string());
            let (template_name, template, schema) = match stage {
                Stage::Comprehension => {
                    vars.insert("questions", consumer_questions().to_string());
                    ("comprehension", &templates.comprehension, SchemaId::Comprehension)
                }
                Stage::Approach => {
                    let offers = v
                        .offers
                        .iter()
                        .map(|o| format!("{}: p_low = {} (LCT), p_high = {} (HCT)", o.label, o.book.low, o.book.high))
                        .collect::<Vec<_>>()
                        .join("\n");
                    let mut allowed: Vec<_> = v.offers.iter().map(|o| serde_json::json!({"choice": o.label})).collect();
                    allowed.push(serde_json::json!({"choice": "leave"}));
                    vars.insert("offers", offers);
                    vars.insert("allowed", serde_json::to_string(&allowed).expect("serializable"));
                    ("approach", &templates.approach, SchemaId::ConsumerChoice)
                }
                Stage::Prices | Stage::PlanDecision { .. } => return Err(mismatch(&stage, "expert")),
            };
            Ok(PromptBundle {
                system_text: fill("consumer_system", &templates.consumer_system, &vars)?,
                user_preamble: format!("{preamble}\n{}", framing(config, false)),
                objective_text: objective_text(objective, config.rounds, false),
                history_block: consumer_history(v),
                question_text: fill(template_name, template, &vars)?,
                schema,
            })
        }
    }
}
