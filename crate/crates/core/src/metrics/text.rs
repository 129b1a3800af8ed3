use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::MetricError;

fn tokens<S: AsRef<str>>(texts: &[S]) -> Vec<&str> {
    texts.iter().flat_map(|t| t.as_ref().split_whitespace()).collect()
}

/// Distinct n-grams over total n-grams of the concatenated token stream.
pub fn dist_n<S: AsRef<str>>(texts: &[S], n: usize) -> Result<f64, MetricError> {
    if n == 0 {
        return Err(MetricError::InvalidArgument("n must be at least 1".into()));
    }
    let toks = tokens(texts);
    if toks.len() < n {
        return Err(MetricError::TooShort { tokens: toks.len(), n });
    }
    let grams: Vec<&[&str]> = toks.windows(n).collect();
    let distinct: HashSet<&[&str]> = grams.iter().copied().collect();
    Ok(distinct.len() as f64 / grams.len() as f64)
}

/// Entropy in bits of the unigram distribution.
pub fn shannon_entropy<S: AsRef<str>>(texts: &[S]) -> Result<f64, MetricError> {
    let toks = tokens(texts);
    if toks.is_empty() {
        return Err(MetricError::Empty("corpus"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &toks {
        *counts.entry(t).or_insert(0) += 1;
    }
    let total = toks.len() as f64;
    let mut freqs: Vec<usize> = counts.into_values().collect();
    // fixed summation order regardless of hash iteration
    freqs.sort_unstable();
    let h: f64 = freqs
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    Ok(h.max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleUsage {
    pub emoji_rate: f64,
    pub hashtag_rate: f64,
    pub mention_rate: f64,
    pub mean_chars: f64,
    pub mean_words: f64,
}

pub fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF | 0x2600..=0x27BF | 0x2B00..=0x2BFF)
}

fn has_marker(text: &str, marker: char) -> bool {
    let mut it = text.chars().peekable();
    while let Some(c) = it.next() {
        if c == marker && it.peek().is_some_and(|n| n.is_alphanumeric() || *n == '_') {
            return true;
        }
    }
    false
}

/// Fractions of texts containing each marker, plus mean lengths. Empty input
/// yields all zeros.
pub fn stylistic_usage<S: AsRef<str>>(texts: &[S]) -> StyleUsage {
    if texts.is_empty() {
        return StyleUsage { emoji_rate: 0.0, hashtag_rate: 0.0, mention_rate: 0.0, mean_chars: 0.0, mean_words: 0.0 };
    }
    let n = texts.len() as f64;
    let frac = |f: &dyn Fn(&str) -> bool| texts.iter().filter(|t| f(t.as_ref())).count() as f64 / n;
    StyleUsage {
        emoji_rate: frac(&|t| t.chars().any(is_emoji)),
        hashtag_rate: frac(&|t| has_marker(t, '#')),
        mention_rate: frac(&|t| has_marker(t, '@')),
        mean_chars: texts.iter().map(|t| t.as_ref().chars().count() as f64).sum::<f64>() / n,
        mean_words: texts.iter().map(|t| t.as_ref().split_whitespace().count() as f64).sum::<f64>() / n,
    }
}
