use std::fmt;

use serde::{Deserialize, Serialize};

use super::MarketError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Institution {
    NoInstitution,
    Verifiability,
    Liability,
}

impl Institution {
    pub const ALL: [Institution; 3] = [Institution::NoInstitution, Institution::Verifiability, Institution::Liability];

    pub fn as_str(self) -> &'static str {
        match self {
            Institution::NoInstitution => "no_institution",
            Institution::Verifiability => "verifiability",
            Institution::Liability => "liability",
        }
    }
}

impl fmt::Display for Institution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Institution {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "no_institution" | "none" | "free" => Ok(Institution::NoInstitution),
            "verifiability" => Ok(Institution::Verifiability),
            "liability" => Ok(Institution::Liability),
            other => Err(format!("unknown institution `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Big,
    Small,
}

impl Problem {
    pub const ALL: [Problem; 2] = [Problem::Big, Problem::Small];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Treatment {
    #[serde(rename = "HCT")]
    Hct,
    #[serde(rename = "LCT")]
    Lct,
}

impl Treatment {
    pub const ALL: [Treatment; 2] = [Treatment::Hct, Treatment::Lct];

    /// The treatment an honest expert gives for `problem`.
    pub fn honest_for(problem: Problem) -> Treatment {
        match problem {
            Problem::Big => Treatment::Hct,
            Problem::Small => Treatment::Lct,
        }
    }

    pub fn solves(self, problem: Problem) -> bool {
        self == Treatment::Hct || problem == Problem::Small
    }
}

impl fmt::Display for Treatment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Treatment::Hct => "HCT",
            Treatment::Lct => "LCT",
        })
    }
}

/// Inclusive integer price grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PriceGrid {
    pub min: u32,
    pub max: u32,
}

impl PriceGrid {
    /// Every valid book, ordered by `p_high` then `p_low`.
    pub fn books(self) -> impl Iterator<Item = PriceBook> {
        (self.min..=self.max).flat_map(move |high| (self.min..=high).map(move |low| PriceBook { low, high }))
    }

    pub fn len(self) -> usize {
        let n = (self.max - self.min + 1) as usize;
        n * (n + 1) / 2
    }

    pub fn is_empty(self) -> bool {
        self.max < self.min
    }
}

/// One expert's posted prices for a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PriceBook {
    #[serde(rename = "p_low")]
    pub low: u32,
    #[serde(rename = "p_high")]
    pub high: u32,
}

impl PriceBook {
    pub fn new(low: u32, high: u32, grid: PriceGrid) -> Result<Self, MarketError> {
        let book = PriceBook { low, high };
        book.validate(grid)?;
        Ok(book)
    }

    pub fn validate(&self, grid: PriceGrid) -> Result<(), MarketError> {
        if self.low < grid.min || self.high > grid.max || self.low > self.high {
            return Err(MarketError::InvalidPriceBook { low: self.low, high: self.high, min: grid.min, max: grid.max });
        }
        Ok(())
    }

    pub fn is_degenerate(&self) -> bool {
        self.low == self.high
    }
}

impl fmt::Display for PriceBook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{},{}}}", self.low, self.high)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Decision {
    pub treatment: Treatment,
    pub charge: u32,
}

impl Decision {
    pub fn new(treatment: Treatment, charge: u32) -> Self {
        Decision { treatment, charge }
    }

    pub fn is_honest_treatment(&self, problem: Problem) -> bool {
        self.treatment == Treatment::honest_for(problem)
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.treatment, self.charge)
    }
}

/// Strategy-method plan: one decision per consumer, made before approaches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertPlan {
    pub decisions: Vec<Decision>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FraudFlags {
    pub under_treatment: bool,
    pub over_treatment: bool,
    pub over_charging: bool,
}

impl FraudFlags {
    pub fn any(&self) -> bool {
        self.under_treatment || self.over_treatment || self.over_charging
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsumerChoice {
    Approach(usize),
    Exit,
}

impl ConsumerChoice {
    pub fn expert(&self) -> Option<usize> {
        match self {
            ConsumerChoice::Approach(e) => Some(*e),
            ConsumerChoice::Exit => None,
        }
    }
}
