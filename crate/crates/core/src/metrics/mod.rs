//! Classification, corpus-diversity, stylistic and rank-test metrics.

mod classification;
mod stats;
mod text;

pub use classification::{classification_metrics, f1_from_counts, ClassificationReport, ConfusionCounts, F1Side};
pub use stats::{
    doubled_midranks, mann_whitney_u, paired_effect_size, pearson, wilcoxon_signed_rank, TestResult, EXACT_LIMIT,
};
pub use text::{dist_n, is_emoji, shannon_entropy, stylistic_usage, StyleUsage};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("corpus has {tokens} tokens, fewer than n = {n}")]
    TooShort { tokens: usize, n: usize },
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("non-finite sample value")]
    NonFinite,
    #[error("{0}")]
    InvalidArgument(String),
}
