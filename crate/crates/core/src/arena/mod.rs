//! The adversarial loop: each round builds preference pairs against the
//! current ensemble, rewrites bot tweets with the current policy, trains a
//! new classifier on the rewritten data, reweights the ensemble and updates
//! the policy by preference optimization. Also the cross-round and
//! cross-community evaluation matrices.

mod eval;
mod rounds;
mod store;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusError;
use crate::detector::{DetectorError, TrainConfig, WeightStrategy};
use crate::generator::{ContextEncoder, DpoConfig, GenerationParams, GeneratorError, PolicyConfig, SftConfig};
use crate::metrics::MetricError;
use crate::textfeat::{FeatureConfig, FeatureError};

pub use eval::{
    cross_community_generalization, eval_matrix, CellMetrics, EvalMatrix, EvalOptions, EvalScope,
    GeneralizationMatrix,
};
pub use rounds::{replace_bot_tweets, Arena, PairStats, RoundArtifacts, RoundState};
pub use store::{load_artifacts, load_round_state, round_dir, save_round};

#[derive(Debug, Error)]
pub enum ArenaError {
    #[error("invalid arena config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<ArenaError>,
    },
    #[error("feature schema differs between communities: {0}")]
    SchemaMismatch(String),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("{path}: {message}")]
    Store { path: String, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

impl ArenaError {
    pub(crate) fn in_round(self, round: usize) -> Self {
        match self {
            e @ ArenaError::Round { .. } => e,
            e => ArenaError::Round {
                round,
                source: Box::new(e),
            },
        }
    }
}

/// Everything the loop needs. `rounds`, `pairs` and `candidates` are K, N
/// and C.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArenaConfig {
    pub rounds: usize,
    pub pairs: usize,
    pub candidates: usize,
    pub strategy: WeightStrategy,
    pub seed: u64,
    pub split: [f64; 3],
    pub features: FeatureConfig,
    pub context: ContextEncoder,
    pub detector: TrainConfig,
    pub policy: PolicyConfig,
    pub vocab_size: usize,
    /// Likelihood training on every user's tweets before the human-only
    /// fine-tuning; 0 epochs skips it.
    pub pretrain: SftConfig,
    pub sft: SftConfig,
    pub dpo: DpoConfig,
    pub sampling: GenerationParams,
    /// At most this many tweets are generated per bot when rewriting.
    pub replace_cap: usize,
    pub eval: EvalOptions,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        Self {
            rounds: 4,
            pairs: 1024,
            candidates: 2,
            strategy: WeightStrategy::Uniform,
            seed: 0,
            split: [8.0, 1.0, 1.0],
            features: FeatureConfig::default(),
            context: ContextEncoder::default(),
            detector: TrainConfig::default(),
            policy: PolicyConfig::default(),
            vocab_size: 512,
            pretrain: SftConfig {
                epochs: 2,
                ..SftConfig::default()
            },
            sft: SftConfig::default(),
            dpo: DpoConfig::default(),
            sampling: GenerationParams {
                temperature: 1.0,
                top_k: 0,
                ..GenerationParams::default()
            },
            replace_cap: 20,
            eval: EvalOptions::default(),
        }
    }
}

impl ArenaConfig {
    /// Shrunk pair count for laptop-sized synthetic runs.
    pub fn desk() -> Self {
        Self {
            pairs: 256,
            ..Self::default()
        }
    }

    /// Every violated constraint, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.rounds < 1 {
            out.push("rounds (K) must be at least 1".to_string());
        }
        if self.pairs < 1 {
            out.push("pairs (N) must be at least 1".to_string());
        }
        if self.candidates < 2 {
            out.push("candidates (C) must be at least 2".to_string());
        }
        if !(self.dpo.beta > 0.0 && self.dpo.beta.is_finite()) {
            out.push(format!("dpo.beta must be positive, got {}", self.dpo.beta));
        }
        if self.split.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            out.push(format!("split ratios must be positive, got {:?}", self.split));
        }
        if self.detector.hidden == 0 || self.detector.epochs == 0 {
            out.push("detector.hidden and detector.epochs must be positive".to_string());
        }
        if self.policy.context_dim != self.context.dim() {
            out.push(format!(
                "policy.context_dim {} does not match the context encoder width {}",
                self.policy.context_dim,
                self.context.dim()
            ));
        }
        if self.policy.tweets_per_response == 0 || self.policy.max_len < 2 {
            out.push("policy needs tweets_per_response >= 1 and max_len >= 2".to_string());
        }
        if self.vocab_size <= 3 {
            out.push(format!("vocab_size {} leaves no words", self.vocab_size));
        }
        if self.replace_cap == 0 {
            out.push("replace_cap must be positive".to_string());
        }
        if let Err(e) = self.sampling.validate() {
            out.push(format!("sampling: {e}"));
        }
        out
    }

    pub fn validate(&self) -> Result<(), ArenaError> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(ArenaError::Config(p))
        }
    }
}

