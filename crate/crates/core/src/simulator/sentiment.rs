use std::collections::HashMap;

/// Maps a post to an opinion in [-1, 1].
pub trait SentimentScorer: Sync {
    fn score(&self, text: &str) -> f64;
}

impl<F: Fn(&str) -> f64 + Sync> SentimentScorer for F {
    fn score(&self, text: &str) -> f64 {
        self(text)
    }
}

const DEFAULT_TERMS: &[(&str, f64)] = &[
    ("good", 0.6),
    ("great", 0.8),
    ("love", 0.8),
    ("happy", 0.7),
    ("amazing", 0.9),
    ("awesome", 0.8),
    ("best", 0.8),
    ("nice", 0.5),
    ("excited", 0.6),
    ("wonderful", 0.9),
    ("glad", 0.5),
    ("fun", 0.5),
    ("beautiful", 0.7),
    ("proud", 0.6),
    ("enjoy", 0.6),
    ("hope", 0.4),
    ("support", 0.4),
    ("safe", 0.4),
    ("win", 0.5),
    ("peace", 0.6),
    ("recovery", 0.5),
    ("thanks", 0.5),
    ("bad", -0.6),
    ("terrible", -0.9),
    ("hate", -0.8),
    ("sad", -0.6),
    ("awful", -0.9),
    ("worst", -0.9),
    ("angry", -0.7),
    ("annoying", -0.5),
    ("boring", -0.4),
    ("horrible", -0.9),
    ("tired", -0.3),
    ("upset", -0.6),
    ("disappointed", -0.6),
    ("ugly", -0.6),
    ("fail", -0.6),
    ("fear", -0.6),
    ("crisis", -0.6),
    ("death", -0.7),
    ("deaths", -0.7),
    ("war", -0.8),
    ("attack", -0.7),
    ("killed", -0.9),
    ("outbreak", -0.5),
    ("lockdown", -0.4),
    ("panic", -0.7),
    ("sick", -0.5),
];

const NEGATORS: &[&str] = &["not", "no", "never", "nothing", "cannot", "without", "nor"];

/// Word-valence lexicon. A post scores the mean valence of its matched
/// words, each flipped when a negator appears within the two preceding
/// tokens; posts without matches score 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    terms: HashMap<String, f64>,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::new(DEFAULT_TERMS.iter().map(|(w, v)| (w.to_string(), *v)))
    }
}

fn is_negator(tok: &str) -> bool {
    NEGATORS.contains(&tok) || tok.ends_with("n't")
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '\u{2019}'))
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase().replace('\u{2019}', "'"))
        .collect()
}

impl Lexicon {
    pub fn new(terms: impl IntoIterator<Item = (String, f64)>) -> Self {
        Self {
            terms: terms.into_iter().map(|(w, v)| (w.to_lowercase(), v.clamp(-1.0, 1.0))).collect(),
        }
    }

    pub fn valence(&self, word: &str) -> Option<f64> {
        self.terms.get(word).copied()
    }
}

impl SentimentScorer for Lexicon {
    fn score(&self, text: &str) -> f64 {
        let toks = tokens(text);
        let mut sum = 0.0;
        let mut matched = 0usize;
        for (i, t) in toks.iter().enumerate() {
            if let Some(v) = self.terms.get(t) {
                let negated = toks[i.saturating_sub(2)..i].iter().any(|p| is_negator(p));
                sum += if negated { -v } else { *v };
                matched += 1;
            }
        }
        if matched == 0 {
            0.0
        } else {
            sum / matched as f64
        }
    }
}
