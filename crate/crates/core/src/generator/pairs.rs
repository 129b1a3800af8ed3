use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::policy::{GenerationParams, PolicyModel, Response};
use super::GeneratorError;
use crate::detector::ScoringContext;
use crate::seeding::substream;

/// A context with the detector-preferred (`chosen`) and dispreferred
/// (`rejected`) responses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub bot: usize,
    pub context: Vec<f64>,
    pub chosen: Response,
    pub rejected: Response,
    pub chosen_score: f64,
    pub rejected_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSet {
    pub pairs: Vec<PreferencePair>,
    /// Draws whose candidates all scored the same and so carried no
    /// preference.
    pub ties: usize,
    /// Bot index of every draw, in draw order.
    pub draws: Vec<usize>,
}

impl PairSet {
    pub fn mean_scores(&self) -> (f64, f64) {
        if self.pairs.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        let n = self.pairs.len() as f64;
        (
            self.pairs.iter().map(|p| p.chosen_score).sum::<f64>() / n,
            self.pairs.iter().map(|p| p.rejected_score).sum::<f64>() / n,
        )
    }
}

/// First index of the maximum and of the minimum.
pub fn extreme_indices(scores: &[f64]) -> (usize, usize) {
    let mut hi = 0;
    let mut lo = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[hi] {
            hi = i;
        }
        if *s < scores[lo] {
            lo = i;
        }
    }
    (hi, lo)
}

/// Draws `n` bots with replacement; for each, samples `c` candidates and
/// keeps the highest- and lowest-scoring as a pair. Draw `i` uses ChaCha
/// stream `i + 1` of `seed`; the bot draws themselves use stream 0.
#[allow(clippy::too_many_arguments)]
pub fn build_preference_pairs(
    policy: &PolicyModel,
    scorer: &ScoringContext<'_>,
    contexts: &[Vec<f64>],
    bots: &[usize],
    n: usize,
    c: usize,
    params: &GenerationParams,
    seed: u64,
) -> Result<PairSet, GeneratorError> {
    if c < 2 {
        return Err(GeneratorError::InvalidArgument(format!("need at least two candidates per bot, got {c}")));
    }
    if bots.is_empty() {
        return Err(GeneratorError::NoBots);
    }
    let mut rng = substream(seed, 0);
    let draws: Vec<usize> = (0..n).map(|_| bots[rng.random_range(0..bots.len())]).collect();
    let results: Vec<Option<PreferencePair>> = draws
        .par_iter()
        .enumerate()
        .map(|(i, &bot)| -> Result<Option<PreferencePair>, GeneratorError> {
            let mut rng = substream(seed, i as u64 + 1);
            let cands = policy.sample(&contexts[bot], params, c, &mut rng)?;
            let scores: Vec<f64> = cands.iter().map(|k| scorer.score_index(bot, &policy.decode(&k.response))).collect();
            let (hi, lo) = extreme_indices(&scores);
            if scores[hi] == scores[lo] {
                return Ok(None);
            }
            Ok(Some(PreferencePair {
                bot,
                context: contexts[bot].clone(),
                chosen: cands[hi].response.clone(),
                rejected: cands[lo].response.clone(),
                chosen_score: scores[hi],
                rejected_score: scores[lo],
            }))
        })
        .collect::<Result<_, _>>()?;
    let ties = results.iter().filter(|r| r.is_none()).count();
    Ok(PairSet {
        pairs: results.into_iter().flatten().collect(),
        ties,
        draws,
    })
}
