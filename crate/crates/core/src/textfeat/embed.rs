use serde::{Deserialize, Serialize};
use unicode_segmentation::UnicodeSegmentation;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub dim: usize,
    pub bigrams: bool,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self { dim: 64, bigrams: true }
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased Unicode words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.unicode_words().map(str::to_lowercase).collect()
}

fn bump(out: &mut [f64], key: &[u8]) {
    let h = fnv1a(key);
    let bucket = (h % out.len() as u64) as usize;
    // sign from the high bit, which the modulus above does not consume
    let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
    out[bucket] += sign;
}

/// Signed feature hashing of unigrams and adjacent bigrams, L2-normalized.
/// Empty or word-free text maps to the zero vector.
pub fn embed_text(text: &str, config: &EmbedConfig) -> Vec<f64> {
    let mut out = vec![0.0; config.dim];
    if config.dim == 0 {
        return out;
    }
    let toks = tokenize(text);
    for t in &toks {
        bump(&mut out, t.as_bytes());
    }
    if config.bigrams {
        for w in toks.windows(2) {
            // 0x1f cannot appear inside a Unicode word
            let key = format!("{}\u{1f}{}", w[0], w[1]);
            bump(&mut out, key.as_bytes());
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|v| *v /= norm);
    }
    out
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
