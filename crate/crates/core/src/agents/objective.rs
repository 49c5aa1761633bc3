use std::fmt;

use serde::{Deserialize, Serialize};

/// Social-preference objective handed to an agent.
///
/// `Default` carries no objective prompt for language-model agents; scripted
/// agents treat it exactly like `SelfInterested`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Default,
    SelfInterested,
    InequityAverse,
    EfficiencyLoving,
}

impl Objective {
    pub const ALL: [Objective; 4] =
        [Objective::Default, Objective::SelfInterested, Objective::InequityAverse, Objective::EfficiencyLoving];

    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Default => "default",
            Objective::SelfInterested => "self_interested",
            Objective::InequityAverse => "inequity_averse",
            Objective::EfficiencyLoving => "efficiency_loving",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Objective::Default => "No Objective",
            Objective::SelfInterested => "Self-Interested",
            Objective::InequityAverse => "Inequity-Averse",
            Objective::EfficiencyLoving => "Efficiency-Loving",
        }
    }

    /// Utility of a (expert payoff, consumer payoff) pair.
    pub fn utility(self, expert_payoff: f64, consumer_payoff: f64) -> f64 {
        match self {
            Objective::Default | Objective::SelfInterested => expert_payoff,
            Objective::EfficiencyLoving => expert_payoff + consumer_payoff,
            Objective::InequityAverse => -(expert_payoff - consumer_payoff).abs(),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Objective {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "default" | "none" | "no_objective" => Ok(Objective::Default),
            "self_interested" | "selfish" => Ok(Objective::SelfInterested),
            "inequity_averse" => Ok(Objective::InequityAverse),
            "efficiency_loving" => Ok(Objective::EfficiencyLoving),
            other => Err(format!("unknown objective `{other}`")),
        }
    }
}
