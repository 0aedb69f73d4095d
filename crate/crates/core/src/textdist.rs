//! Tokenization, prompt-budget truncation, unigram word distributions and the
//! Jensen-Shannon divergence used as the distance between texts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerKind {
    /// Split on Unicode whitespace; empty fields are dropped.
    Whitespace,
    /// Unicode word boundaries (UAX #29); punctuation-only segments are dropped.
    UnicodeWord,
}

impl std::str::FromStr for TokenizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" => Ok(Self::Whitespace),
            "unicode_word" => Ok(Self::UnicodeWord),
            other => Err(Error::InvalidConfig(format!("unknown tokenizer `{other}`"))),
        }
    }
}

/// A tokenization scheme. Budgets and distributions use different defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tokenizer {
    #[serde(rename = "tokenizer")]
    pub kind: TokenizerKind,
    pub lowercase: bool,
    pub strip_punct: bool,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::budget()
    }
}

impl Tokenizer {
    /// Plain whitespace counting, used for prompt budgets.
    pub const fn budget() -> Self {
        Self {
            kind: TokenizerKind::Whitespace,
            lowercase: false,
            strip_punct: false,
        }
    }

    /// Lowercased whitespace tokens with punctuation stripped, used for word distributions.
    pub const fn distribution() -> Self {
        Self {
            kind: TokenizerKind::Whitespace,
            lowercase: true,
            strip_punct: true,
        }
    }

    fn normalize(&self, raw: &str) -> Option<String> {
        let mut token: String = if self.strip_punct {
            raw.chars().filter(|c| c.is_alphanumeric()).collect()
        } else {
            raw.to_owned()
        };
        if self.lowercase {
            token = token.to_lowercase();
        }
        (!token.is_empty()).then_some(token)
    }

    fn raw_pieces<'a>(&self, text: &'a str) -> Box<dyn Iterator<Item = &'a str> + 'a> {
        match self.kind {
            TokenizerKind::Whitespace => Box::new(text.split_whitespace()),
            TokenizerKind::UnicodeWord => Box::new(text.unicode_words()),
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        self.raw_pieces(text)
            .filter_map(|piece| self.normalize(piece))
            .collect()
    }

    pub fn count(&self, text: &str) -> usize {
        if !self.strip_punct {
            return self.raw_pieces(text).count();
        }
        self.raw_pieces(text)
            .filter(|piece| piece.chars().any(char::is_alphanumeric))
            .count()
    }
}

pub fn tokenize(text: &str, tokenizer: &Tokenizer) -> Vec<String> {
    tokenizer.tokenize(text)
}

pub fn count_tokens(text: &str, tokenizer: &Tokenizer) -> usize {
    tokenizer.count(text)
}

/// Which end of an over-long section is dropped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruncationSide {
    /// Keep the leading tokens.
    #[default]
    Tail,
    /// Keep the trailing tokens.
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Truncated {
    pub text: String,
    pub dropped: usize,
}

/// Cut `text` to at most `limit` tokens, dropping from the tail.
///
/// Text already within the limit is returned unchanged; otherwise the kept
/// tokens are rejoined with single spaces.
pub fn truncate_to_budget(text: &str, limit: usize, tokenizer: &Tokenizer) -> String {
    truncate_with(text, limit, tokenizer, TruncationSide::Tail).text
}

pub fn truncate_with(text: &str, limit: usize, tokenizer: &Tokenizer, side: TruncationSide) -> Truncated {
    let total = tokenizer.count(text);
    if total <= limit {
        return Truncated {
            text: text.to_owned(),
            dropped: 0,
        };
    }
    let tokens = tokenizer.tokenize(text);
    let kept = match side {
        TruncationSide::Tail => &tokens[..limit],
        TruncationSide::Head => &tokens[tokens.len() - limit..],
    };
    Truncated {
        text: kept.join(" "),
        dropped: total - limit,
    }
}

/// Normalized unigram probability mass. Only tokens with positive mass are stored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WordDistribution {
    mass: BTreeMap<String, f64>,
}

impl WordDistribution {
    pub fn from_text(text: &str, tokenizer: &Tokenizer) -> Self {
        Self::from_tokens(tokenizer.tokenize(text))
    }

    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for token in tokens {
            *counts.entry(token.into()).or_default() += 1;
        }
        let total: u64 = counts.values().sum();
        let mass = counts
            .into_iter()
            .map(|(token, c)| (token, c as f64 / total as f64))
            .collect();
        Self { mass }
    }

    /// Build from explicit weights; entries with non-positive weight are dropped and
    /// the rest renormalized.
    pub fn from_weights<I, S>(weights: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut mass: BTreeMap<String, f64> = BTreeMap::new();
        for (token, w) in weights {
            if w > 0.0 {
                *mass.entry(token.into()).or_default() += w;
            }
        }
        let total: f64 = mass.values().sum();
        for v in mass.values_mut() {
            *v /= total;
        }
        Self { mass }
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn get(&self, token: &str) -> f64 {
        self.mass.get(token).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.mass.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.values().sum()
    }
}

pub fn word_distribution(text: &str, tokenizer: &Tokenizer) -> WordDistribution {
    WordDistribution::from_text(text, tokenizer)
}

fn half_kl_term(p: f64, m: f64) -> f64 {
    if p > 0.0 {
        0.5 * p * (p / m).log2()
    } else {
        0.0
    }
}

/// Base-2 Jensen-Shannon divergence, in `[0, 1]`.
///
/// Tokens are visited in sorted order on the merged support so the result is
/// bit-for-bit symmetric in its arguments.
pub fn jsd(p: &WordDistribution, q: &WordDistribution) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    let mut left = p.mass.iter().peekable();
    let mut right = q.mass.iter().peekable();
    let mut total = 0.0;
    loop {
        let (pi, qi) = match (left.peek(), right.peek()) {
            (None, None) => break,
            (Some((_, &a)), None) => {
                left.next();
                (a, 0.0)
            }
            (None, Some((_, &b))) => {
                right.next();
                (0.0, b)
            }
            (Some((ka, &a)), Some((kb, &b))) => match ka.cmp(kb) {
                std::cmp::Ordering::Less => {
                    left.next();
                    (a, 0.0)
                }
                std::cmp::Ordering::Greater => {
                    right.next();
                    (0.0, b)
                }
                std::cmp::Ordering::Equal => {
                    left.next();
                    right.next();
                    (a, b)
                }
            },
        };
        let m = 0.5 * (pi + qi);
        total += half_kl_term(pi, m) + half_kl_term(qi, m);
    }
    Ok(total.clamp(0.0, 1.0))
}

/// Square root of [`jsd`], which is a proper metric.
pub fn sqrt_jsd(p: &WordDistribution, q: &WordDistribution) -> Result<f64> {
    jsd(p, q).map(f64::sqrt)
}

/// Text divergence used as the distance between distributions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextDivergence {
    #[default]
    Jsd,
    SqrtJsd,
}

impl TextDivergence {
    pub fn apply(self, p: &WordDistribution, q: &WordDistribution) -> Result<f64> {
        match self {
            TextDivergence::Jsd => jsd(p, q),
            TextDivergence::SqrtJsd => sqrt_jsd(p, q),
        }
    }
}
