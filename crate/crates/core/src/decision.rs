use std::fmt;

use serde::{Deserialize, Serialize};

/// Result of a single treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "+")]
    Success,
    #[serde(rename = "-")]
    Failure,
}

impl Outcome {
    pub fn is_success(self) -> bool {
        matches!(self, Outcome::Success)
    }

    pub fn from_bool(success: bool) -> Self {
        if success {
            Outcome::Success
        } else {
            Outcome::Failure
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Outcome::Success => '+',
            Outcome::Failure => '-',
        }
    }

    /// Parses a word such as `"--+-"`. Whitespace and commas are ignored.
    pub fn parse_word(word: &str) -> Option<Vec<Outcome>> {
        word.chars()
            .filter(|c| !c.is_whitespace() && *c != ',')
            .map(|c| match c {
                '+' => Some(Outcome::Success),
                '-' => Some(Outcome::Failure),
                _ => None,
            })
            .collect()
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// What the engine recommends for the next step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Continue,
    /// Threshold reached: stop on the next success.
    Armed,
    Stop,
    /// Statistical rule is vacuous (no success yet); continuing needs consent.
    ConsentRequired,
}

/// Which rule produced an [`Action`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    OddsRule,
    EstimatedOddsRule,
    RefusalRule,
    Threshold,
    ConsentPolicy,
    /// Every scheduled treatment has been given.
    Exhausted,
}
