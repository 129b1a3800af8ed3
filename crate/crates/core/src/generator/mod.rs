//! The generator policy: a small conditional token model trained by
//! supervised fine-tuning and then by preference optimization against the
//! detector, plus prompt assets and a chat-completion client for running a
//! hosted model instead.

mod context;
pub mod endpoint;
mod pairs;
mod policy;
pub mod prompt;
mod train;
mod vocab;

use thiserror::Error;

use crate::diffmath::DiffError;

pub use context::ContextEncoder;
pub use endpoint::{external_generate, EndpointConfig, EndpointError};
pub use pairs::{build_preference_pairs, extreme_indices, PairSet, PreferencePair};
pub use policy::{
    batch_log_probs, tape_log_probs, Candidate, GenerationParams, PolicyConfig, PolicyModel, PolicyVars, Response,
    SequenceBatch,
};
pub use train::{
    dpo_loss, dpo_train, mean_nll, sft_examples, sft_loss, sft_train, DpoConfig, SftConfig, SftExample,
};
pub use vocab::{words, Vocab, BOS, EOT, UNK};

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("{0}")]
    InvalidArgument(String),
    #[error("context has {found} entries, policy expects {expected}")]
    ContextDim { expected: usize, found: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("template: {0}")]
    Template(String),
    #[error("no training examples")]
    NoExamples,
    #[error("no preference pairs")]
    NoPairs,
    #[error("dataset has no bots")]
    NoBots,
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Endpoint(#[from] EndpointError),
}
