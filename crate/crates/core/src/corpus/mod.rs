//! Social-community data model: users with account features and tweets, the
//! typed follow graph, file ingestion, synthetic fixtures, Louvain community
//! detection and stratified splitting.

mod community;
mod fixture;
mod io;
mod model;
mod split;

pub use community::{
    detect_communities, modularity, modularity_of_labels, undirected_pairs, CommunityPartition,
    LouvainConfig,
};
pub use fixture::{synth_fixture, FixtureSpec, FixtureVocab};
pub use io::{
    dataset_digest, format_timestamp, load_dataset, parse_timestamp, save_dataset,
    serialize_dataset,
};
pub use model::{Dataset, Edge, Label, Relation, Tweet, UserRecord};
pub use split::{split_dataset, Split};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("duplicate user id {0:?}")]
    DuplicateUser(String),
    #[error("{context} references unknown user {id:?}")]
    UnknownUser { context: &'static str, id: String },
    #[error("user {user:?}: numeric property {property:?} is not finite")]
    NonFinite { user: String, property: String },
    #[error("user {0:?} is not covered by the partition")]
    UncoveredUser(String),
    #[error("cannot split {users} users into {parts} non-empty parts")]
    TooFewUsers { users: usize, parts: usize },
    #[error("serialization failed: {0}")]
    Serialize(String),
    #[error("{0}")]
    InvalidArgument(String),
}
