use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Error)]
#[serde(rename_all = "snake_case", tag = "code", content = "value")]
pub enum ParseFailure {
    #[error("no numeral in response")]
    NoNumeral,
    #[error("numeral {0} outside [0, 1]")]
    OutOfRange(f64),
}

impl ParseFailure {
    pub fn code(&self) -> &'static str {
        match self {
            ParseFailure::NoNumeral => "no_numeral",
            ParseFailure::OutOfRange(_) => "out_of_range",
        }
    }
}

fn numeral() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?(?:\d+(?:\.\d+)?|\.\d+)").expect("valid pattern"))
}

/// Extracts the first decimal numeral of a free-text reply. A leading minus
/// sign directly attached to the digits is part of the numeral.
pub fn parse_score(response: &str) -> Result<f64, ParseFailure> {
    let m = numeral().find(response).ok_or(ParseFailure::NoNumeral)?;
    let value: f64 = m.as_str().parse().map_err(|_| ParseFailure::NoNumeral)?;
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(ParseFailure::OutOfRange(value))
    }
}
