use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::QacError;

/// Which system produced a suggestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Mpc,
    Lm,
    Guided,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Mpc => "mpc",
            Source::Lm => "lm",
            Source::Guided => "guided",
        })
    }
}

impl FromStr for Source {
    type Err = QacError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mpc" => Ok(Source::Mpc),
            "lm" => Ok(Source::Lm),
            "guided" => Ok(Source::Guided),
            other => Err(QacError::invalid(format!("unknown mode {other:?} (expected mpc, lm or guided)"))),
        }
    }
}

/// A ranked full-query completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub text: String,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
    pub source: Source,
    pub trie_conforming: bool,
}

pub(crate) fn assign_ranks(list: &mut [Suggestion]) {
    for (i, s) in list.iter_mut().enumerate() {
        s.rank = i + 1;
    }
}
