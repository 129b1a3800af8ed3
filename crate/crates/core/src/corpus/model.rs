use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::CorpusError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Human,
    Bot,
}

impl Label {
    pub fn is_human(self) -> bool {
        self == Label::Human
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    Follow,
    Friend,
}

impl Relation {
    pub const ALL: [Relation; 2] = [Relation::Follow, Relation::Friend];

    pub fn index(self) -> usize {
        match self {
            Relation::Follow => 0,
            Relation::Friend => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Follow => "follow",
            Relation::Friend => "friend",
        }
    }
}

impl std::str::FromStr for Relation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "follow" => Ok(Relation::Follow),
            "friend" => Ok(Relation::Friend),
            other => Err(format!("unknown relation {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tweet {
    pub timestamp: DateTime<Utc>,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub id: String,
    pub label: Label,
    pub numeric_props: BTreeMap<String, f64>,
    pub categorical_props: BTreeMap<String, String>,
    pub description: String,
    pub tweets: Vec<Tweet>,
}

/// Directed typed edge: `src` follows (or befriends) `dst`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub relation: Relation,
}

/// Users, their tweets and the typed follow graph between them.
///
/// Construction validates every invariant: unique ids, finite numeric
/// properties, endpoints that exist. Self-loops and exact duplicate edges
/// are dropped and tweets are sorted by timestamp.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    users: Vec<UserRecord>,
    edges: Vec<Edge>,
    index: HashMap<String, usize>,
    pub community_id: Option<BTreeMap<String, usize>>,
}

impl Dataset {
    pub fn new(mut users: Vec<UserRecord>, edges: Vec<Edge>) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(users.len());
        for (i, u) in users.iter_mut().enumerate() {
            if index.insert(u.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateUser(u.id.clone()));
            }
            if let Some((name, _)) = u.numeric_props.iter().find(|(_, v)| !v.is_finite()) {
                return Err(CorpusError::NonFinite {
                    user: u.id.clone(),
                    property: name.clone(),
                });
            }
            u.tweets.sort_by_key(|t| t.timestamp);
        }
        let mut seen = BTreeSet::new();
        let mut kept = Vec::with_capacity(edges.len());
        for e in edges {
            for end in [&e.src, &e.dst] {
                if !index.contains_key(end) {
                    return Err(CorpusError::UnknownUser {
                        context: "edge",
                        id: end.clone(),
                    });
                }
            }
            if e.src != e.dst && seen.insert(e.clone()) {
                kept.push(e);
            }
        }
        Ok(Self {
            users,
            edges: kept,
            index,
            community_id: None,
        })
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn user(&self, id: &str) -> Option<&UserRecord> {
        self.index_of(id).map(|i| &self.users[i])
    }

    pub fn labels(&self) -> Vec<Label> {
        self.users.iter().map(|u| u.label).collect()
    }

    pub fn bot_indices(&self) -> Vec<usize> {
        (0..self.users.len())
            .filter(|&i| self.users[i].label == Label::Bot)
            .collect()
    }

    /// Edges as `(src index, dst index, relation)`.
    pub fn indexed_edges(&self) -> Vec<(usize, usize, Relation)> {
        self.edges
            .iter()
            .map(|e| (self.index[&e.src], self.index[&e.dst], e.relation))
            .collect()
    }

    /// Users `i` follows (outgoing follow edges), in edge order.
    pub fn followees(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.users.len()];
        for (s, d, r) in self.indexed_edges() {
            if r == Relation::Follow {
                out[s].push(d);
            }
        }
        out
    }

    /// Undirected neighbour sets over both relations, sorted.
    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut sets = vec![BTreeSet::new(); self.users.len()];
        for (s, d, _) in self.indexed_edges() {
            sets[s].insert(d);
            sets[d].insert(s);
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }

    /// Copy with user `i`'s tweets replaced; structure is untouched.
    pub fn with_tweets(&self, replacements: &[(usize, Vec<Tweet>)]) -> Self {
        let mut out = self.clone();
        for (i, tweets) in replacements {
            let mut tweets = tweets.clone();
            tweets.sort_by_key(|t| t.timestamp);
            out.users[*i].tweets = tweets;
        }
        out
    }

    /// Keeps the listed users (by index) and the edges among them.
    pub fn subset(&self, keep: &[usize]) -> Result<Self, CorpusError> {
        let users: Vec<UserRecord> = keep.iter().map(|&i| self.users[i].clone()).collect();
        let ids: BTreeSet<&str> = users.iter().map(|u| u.id.as_str()).collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| ids.contains(e.src.as_str()) && ids.contains(e.dst.as_str()))
            .cloned()
            .collect();
        Dataset::new(users, edges)
    }
}
