//! Tokenization, n-gram counting and the two n-gram metrics: distinct-n
//! (set diversity) and n-gram cosine similarity (pairwise similarity).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::ResponseSet;
use crate::error::{DivError, Result};
use crate::reduction::SimilarityMetric;

pub const MAX_ORDER: usize = 10;

/// Range of n-gram orders to average over, plus tokenizer options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NGramConfig {
    n_min: usize,
    n_max: usize,
    pub lowercase: bool,
}

impl Default for NGramConfig {
    fn default() -> Self {
        Self {
            n_min: 1,
            n_max: 5,
            lowercase: true,
        }
    }
}

impl NGramConfig {
    pub fn new(n_min: usize, n_max: usize, lowercase: bool) -> Result<Self> {
        if n_min < 1 || n_min > n_max || n_max > MAX_ORDER {
            return Err(DivError::InvalidInput(format!(
                "n-gram range {n_min}:{n_max} must satisfy 1 <= min <= max <= {MAX_ORDER}"
            )));
        }
        Ok(Self {
            n_min,
            n_max,
            lowercase,
        })
    }

    pub fn n_min(&self) -> usize {
        self.n_min
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn orders(&self) -> std::ops::RangeInclusive<usize> {
        self.n_min..=self.n_max
    }
}

/// Split on whitespace, then peel non-alphanumeric characters off both ends
/// of each chunk as single-character tokens. Inner punctuation ("don't")
/// stays attached.
pub fn tokenize(text: &str, lowercase: bool) -> Vec<String> {
    let text = if lowercase {
        text.to_lowercase()
    } else {
        text.to_owned()
    };
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let Some(first) = chars.iter().position(|c| c.is_alphanumeric()) else {
            tokens.extend(chars.iter().map(char::to_string));
            continue;
        };
        let last = chars.iter().rposition(|c| c.is_alphanumeric()).unwrap_or(first);
        tokens.extend(chars[..first].iter().map(char::to_string));
        tokens.push(chars[first..=last].iter().collect());
        tokens.extend(chars[last + 1..].iter().map(char::to_string));
    }
    tokens
}

/// Multiset of n-grams of a single order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NGramBag {
    counts: BTreeMap<Vec<String>, u64>,
    total: u64,
}

impl NGramBag {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens(tokens: &[String], n: usize) -> Self {
        let mut bag = Self::new();
        bag.extend_from_tokens(tokens, n);
        bag
    }

    /// Add the n-grams of one token sequence. Grams never span two calls.
    pub fn extend_from_tokens(&mut self, tokens: &[String], n: usize) {
        if n == 0 {
            return;
        }
        for gram in tokens.windows(n) {
            *self.counts.entry(gram.to_vec()).or_insert(0) += 1;
            self.total += 1;
        }
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn count(&self, gram: &[String]) -> u64 {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[String], u64)> {
        self.counts.iter().map(|(k, &v)| (k.as_slice(), v))
    }

    fn squared_norm(&self) -> u64 {
        self.counts.values().map(|c| c * c).sum()
    }

    fn dot(&self, other: &NGramBag) -> u64 {
        let (small, large) = if self.distinct() <= other.distinct() {
            (self, other)
        } else {
            (other, self)
        };
        small
            .counts
            .iter()
            .map(|(g, c)| c * large.count(g))
            .sum()
    }
}

/// Ratio of distinct to total n-grams pooled over all responses, averaged
/// over the configured orders that yield at least one n-gram.
pub fn distinct_n(set: &ResponseSet, cfg: &NGramConfig) -> Result<f64> {
    let tokenized: Vec<Vec<String>> = set
        .responses
        .iter()
        .map(|r| tokenize(r, cfg.lowercase))
        .collect();
    let mut sum = 0.0;
    let mut used = 0usize;
    for n in cfg.orders() {
        let mut bag = NGramBag::new();
        for tokens in &tokenized {
            bag.extend_from_tokens(tokens, n);
        }
        if !bag.is_empty() {
            sum += bag.distinct() as f64 / bag.total() as f64;
            used += 1;
        }
    }
    if used == 0 {
        return Err(DivError::EmptySet);
    }
    Ok(sum / used as f64)
}

/// Cosine between n-gram count vectors, averaged over the orders where at
/// least one side has an n-gram. An order where only one side is empty
/// contributes 0.
pub fn cosine_similarity(a: &str, b: &str, cfg: &NGramConfig) -> Result<f64> {
    let ta = tokenize(a, cfg.lowercase);
    let tb = tokenize(b, cfg.lowercase);
    cosine_tokens(&ta, &tb, cfg)
}

fn cosine_tokens(ta: &[String], tb: &[String], cfg: &NGramConfig) -> Result<f64> {
    let mut sum = 0.0;
    let mut used = 0usize;
    for n in cfg.orders() {
        let ba = NGramBag::from_tokens(ta, n);
        let bb = NGramBag::from_tokens(tb, n);
        if ba.is_empty() && bb.is_empty() {
            continue;
        }
        used += 1;
        if ba.is_empty() || bb.is_empty() {
            continue;
        }
        // Integer dot product and norms keep the result independent of
        // iteration order.
        let dot = ba.dot(&bb) as f64;
        let norms = ((ba.squared_norm() as u128 * bb.squared_norm() as u128) as f64).sqrt();
        sum += (dot / norms).min(1.0);
    }
    if used == 0 {
        return Err(DivError::NoTokens);
    }
    Ok(sum / used as f64)
}

/// n-gram cosine as a [`SimilarityMetric`].
#[derive(Debug, Clone, Copy, Default)]
pub struct NGramCosine {
    pub cfg: NGramConfig,
}

impl NGramCosine {
    pub fn new(cfg: NGramConfig) -> Self {
        Self { cfg }
    }
}

impl SimilarityMetric for NGramCosine {
    fn name(&self) -> &str {
        "cos-sim"
    }

    fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        cosine_similarity(a, b, &self.cfg)
    }
}
