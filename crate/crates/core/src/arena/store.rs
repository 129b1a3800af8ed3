//! Per-round checkpoint directories:
//!
//! ```text
//! round_00/  policy.json classifier.json weights.json digest.txt bot_tweets.json
//! round_01/  ... plus pairs.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::rounds::{PairStats, RoundArtifacts, RoundState};
use super::ArenaError;
use crate::corpus::{dataset_digest, Dataset, Tweet};
use crate::detector::{EnsembleDetector, RgcnClassifier, WeightStrategy};
use crate::generator::PolicyModel;

pub fn round_dir(root: &Path, round: usize) -> PathBuf {
    root.join(format!("round_{round:02}"))
}

fn store_err(path: &Path, e: impl std::fmt::Display) -> ArenaError {
    ArenaError::Store {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn write(path: &Path, text: &str) -> Result<(), ArenaError> {
    fs::write(path, text).map_err(|e| store_err(path, e))
}

fn read(path: &Path) -> Result<String, ArenaError> {
    fs::read_to_string(path).map_err(|e| store_err(path, e))
}

#[derive(Serialize, Deserialize)]
struct BotTweets {
    user: String,
    tweets: Vec<Tweet>,
}

pub fn save_round(
    root: &Path,
    state: &RoundState,
    strategy: WeightStrategy,
    stats: Option<&PairStats>,
) -> Result<(), ArenaError> {
    let dir = round_dir(root, state.round);
    fs::create_dir_all(&dir).map_err(|e| store_err(&dir, e))?;
    write(&dir.join("policy.json"), &state.policy.to_json()?)?;
    let latest = state.members.last().expect("non-empty");
    write(&dir.join("classifier.json"), &latest.to_json()?)?;
    let weights = EnsembleDetector::new(state.members.clone(), strategy)?.weights().to_vec();
    let w = serde_json::json!({"strategy": strategy.to_string(), "weights": weights});
    write(&dir.join("weights.json"), &format!("{w:#}\n"))?;
    write(&dir.join("digest.txt"), &format!("{}\n", dataset_digest(&state.dataset)?))?;
    let bots: Vec<BotTweets> = state
        .dataset
        .bot_indices()
        .into_iter()
        .map(|b| {
            let u = &state.dataset.users()[b];
            BotTweets {
                user: u.id.clone(),
                tweets: u.tweets.clone(),
            }
        })
        .collect();
    let text = serde_json::to_string(&bots).map_err(|e| store_err(&dir, e))?;
    write(&dir.join("bot_tweets.json"), &text)?;
    if let Some(stats) = stats {
        let path = dir.join("pairs.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| store_err(&path, e))?;
        w.serialize(stats).map_err(|e| store_err(&path, e))?;
        w.flush().map_err(|e| store_err(&path, e))?;
    }
    Ok(())
}

fn load_classifier(root: &Path, round: usize) -> Result<RgcnClassifier, ArenaError> {
    Ok(RgcnClassifier::from_json(&read(&round_dir(root, round).join("classifier.json"))?)?)
}

fn load_policy(root: &Path, round: usize) -> Result<PolicyModel, ArenaError> {
    Ok(PolicyModel::from_json(&read(&round_dir(root, round).join("policy.json"))?)?)
}

/// Rebuilds the state saved after `round` on top of the original dataset
/// `base`. The stored digest is checked against the rebuilt dataset.
pub fn load_round_state(root: &Path, round: usize, base: &Dataset) -> Result<RoundState, ArenaError> {
    let dir = round_dir(root, round);
    let members = (0..=round).map(|j| load_classifier(root, j)).collect::<Result<Vec<_>, _>>()?;
    let path = dir.join("bot_tweets.json");
    let bots: Vec<BotTweets> = serde_json::from_str(&read(&path)?).map_err(|e| store_err(&path, e))?;
    let mut replacements = Vec::with_capacity(bots.len());
    for b in bots {
        let i = base
            .index_of(&b.user)
            .ok_or_else(|| store_err(&path, format!("unknown user {:?}", b.user)))?;
        replacements.push((i, b.tweets));
    }
    let dataset = base.with_tweets(&replacements);
    let expected = read(&dir.join("digest.txt"))?;
    if dataset_digest(&dataset)? != expected.trim() {
        return Err(store_err(&dir, "rebuilt dataset does not match the stored digest"));
    }
    Ok(RoundState {
        round,
        policy: load_policy(root, round)?,
        members,
        dataset,
    })
}

/// Reads a finished run of `rounds` rounds back from disk.
pub fn load_artifacts(root: &Path, rounds: usize) -> Result<RoundArtifacts, ArenaError> {
    let mut arts = RoundArtifacts {
        policies: Vec::new(),
        classifiers: Vec::new(),
        weights: Vec::new(),
        digests: Vec::new(),
        pair_stats: Vec::new(),
    };
    for k in 0..=rounds {
        let dir = round_dir(root, k);
        arts.policies.push(load_policy(root, k)?);
        arts.classifiers.push(load_classifier(root, k)?);
        let path = dir.join("weights.json");
        let w: serde_json::Value = serde_json::from_str(&read(&path)?).map_err(|e| store_err(&path, e))?;
        let weights = serde_json::from_value(w["weights"].clone()).map_err(|e| store_err(&path, e))?;
        arts.weights.push(weights);
        arts.digests.push(read(&dir.join("digest.txt"))?.trim().to_string());
        if k > 0 {
            let path = dir.join("pairs.csv");
            let mut r = csv::Reader::from_path(&path).map_err(|e| store_err(&path, e))?;
            let stats: PairStats = r
                .deserialize()
                .next()
                .ok_or_else(|| store_err(&path, "empty"))?
                .map_err(|e| store_err(&path, e))?;
            arts.pair_stats.push(stats);
        }
    }
    Ok(arts)
}
