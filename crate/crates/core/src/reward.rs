//! Rule-based verifiable reward: answer-format parsing plus exact-match scoring.
//!
//! A response is well formed iff it matches
//!
//! ```text
//! filler* ANS_OPEN event (SEP event)* ANS_CLOSE EOS
//! ```
//!
//! with pairwise distinct events.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{AparlError, Result};
use crate::vocab::{TokenId, Vocab, ANS_CLOSE, ANS_OPEN, EOS, SEP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseStatus {
    WellFormed,
    FormatError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseResult {
    pub status: ParseStatus,
    /// Empty iff `status` is `FormatError`.
    pub predicted: BTreeSet<u32>,
    /// Tokens up to and including the first `EOS` (whole input if none).
    pub consumed_len: usize,
}

impl ParseResult {
    fn format_error(consumed_len: usize) -> Self {
        ParseResult {
            status: ParseStatus::FormatError,
            predicted: BTreeSet::new(),
            consumed_len,
        }
    }

    pub fn is_well_formed(&self) -> bool {
        self.status == ParseStatus::WellFormed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Accuracy magnitude.
    pub c_a: f64,
    /// Format magnitude.
    pub c_f: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig { c_a: 1.0, c_f: 0.5 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_a > 0.0 && self.c_f > 0.0 && self.c_a.is_finite() && self.c_f.is_finite()) {
            return Err(AparlError::Config(format!(
                "reward magnitudes must be positive, got c_a={} c_f={}",
                self.c_a, self.c_f
            )));
        }
        Ok(())
    }

    pub fn max_reward(&self) -> f64 {
        self.c_a + self.c_f
    }
}

pub fn parse_response(tokens: &[TokenId], vocab: &Vocab) -> ParseResult {
    let consumed_len = tokens
        .iter()
        .position(|&t| t == EOS)
        .map_or(tokens.len(), |i| i + 1);

    let mut i = 0;
    while i < tokens.len() && vocab.is_filler(tokens[i]) {
        i += 1;
    }
    if tokens.get(i) != Some(&ANS_OPEN) {
        return ParseResult::format_error(consumed_len);
    }
    i += 1;
    let mut predicted = BTreeSet::new();
    loop {
        let Some(event) = tokens.get(i).and_then(|&t| vocab.event_of(t)) else {
            return ParseResult::format_error(consumed_len);
        };
        if !predicted.insert(event) {
            return ParseResult::format_error(consumed_len);
        }
        i += 1;
        match tokens.get(i) {
            Some(&SEP) => i += 1,
            Some(&ANS_CLOSE) => break,
            _ => return ParseResult::format_error(consumed_len),
        }
    }
    // ANS_CLOSE must be followed by EOS as the final token.
    if i + 2 != tokens.len() || tokens[i + 1] != EOS {
        return ParseResult::format_error(consumed_len);
    }
    ParseResult {
        status: ParseStatus::WellFormed,
        predicted,
        consumed_len,
    }
}

/// `C_a + C_f` for an exact match, `-C_a + C_f` for a well-formed miss and
/// `-C_a - C_f` for a format error.
pub fn score(parse: &ParseResult, gold: &BTreeSet<u32>, cfg: &RewardConfig) -> f64 {
    match parse.status {
        ParseStatus::FormatError => -cfg.c_a - cfg.c_f,
        ParseStatus::WellFormed if parse.predicted == *gold => cfg.c_a + cfg.c_f,
        ParseStatus::WellFormed => -cfg.c_a + cfg.c_f,
    }
}

/// True when the parse is an exact-match answer.
pub fn is_correct(parse: &ParseResult, gold: &BTreeSet<u32>) -> bool {
    parse.is_well_formed() && parse.predicted == *gold
}

/// Gold response used for supervised targets: answer tags around the sorted
/// gold events, no reasoning prefix.
pub fn format_answer(gold: &BTreeSet<u32>, vocab: &Vocab) -> Vec<TokenId> {
    let mut out = vec![ANS_OPEN];
    for (k, &e) in gold.iter().enumerate() {
        if k > 0 {
            out.push(SEP);
        }
        out.push(vocab.event(e));
    }
    out.push(ANS_CLOSE);
    out.push(EOS);
    out
}
