//! Group-opinion simulation (generative agents plus bounded-confidence and
//! Lorenz baselines) and event spread over the follow graph.

mod abm;
mod agents;
mod events;
mod sentiment;
mod spread;
mod trajectory;

use thiserror::Error;

use crate::generator::GeneratorError;

pub use abm::{
    bc_update, lorenz_delta, opinion_clusters, run_abm, step_bc, step_lorenz, AbmModel, BcParams, LorenzParams,
};
pub use agents::{
    AgentRequest, AgentState, EndpointGenerator, GenerativeConfig, GenerativeRun, OpinionSim, PolicyGenerator,
    PostGenerator,
};
pub use events::{Event, EventSchedule};
pub use sentiment::{Lexicon, SentimentScorer};
pub use spread::{choose_seeds, mentions_event, run_spread, SpreadConfig, SpreadRun, TopicPoster};
pub use trajectory::{opinion_metrics, OpinionMetrics, OpinionTrajectory, TrajectorySummary};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("simulated horizon {sim} differs from the real horizon {real}")]
    HorizonMismatch { sim: usize, real: usize },
    #[error("{seeds} seed users requested but the graph has {users}")]
    SeedCount { seeds: usize, users: usize },
    #[error("{0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}
