//! Relational graph-convolution bot detector: the per-round classifier, its
//! supervised training, the weighted ensemble over rounds and fast
//! per-candidate rescoring.

mod ensemble;
mod forward;
mod model;
mod train;

use thiserror::Error;

use crate::diffmath::DiffError;
use crate::metrics::MetricError;
use crate::textfeat::FeatureError;

pub use ensemble::{make_weights, EnsembleDetector, ScoringContext, WeightStrategy};
pub use forward::{
    forward, forward_full, rescore_target, tape_cross_entropy, tape_logits, Activations, DropoutMasks, RelGraph,
    TapeParams,
};
pub use model::{Architecture, Linear, RelLayer, RgcnClassifier, HUMAN_CLASS, RELATIONS};
pub use train::{class_targets, dropout_masks, training_loss, train_classifier, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("input widths {found:?} do not match the expected {expected:?}")]
    DimMismatch { expected: [usize; 4], found: [usize; 4] },
    #[error("graph has {nodes} nodes but features cover {rows}")]
    MissingFeatures { nodes: usize, rows: usize },
    #[error("training set contains a single class")]
    SingleClass,
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("unknown weight strategy {0:?}")]
    UnknownStrategy(String),
    #[error("ensemble has {members} members but {weights} weights")]
    WeightCount { members: usize, weights: usize },
    #[error("ensemble has no members")]
    EmptyEnsemble,
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}
