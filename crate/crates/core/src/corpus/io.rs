//! JSON-lines users/tweets files and the CSV edge list.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CorpusError, Dataset, Edge, Label, Relation, Tweet, UserRecord};

#[derive(Serialize, Deserialize)]
struct UserLine {
    id: String,
    label: Label,
    #[serde(default)]
    numeric_props: BTreeMap<String, f64>,
    #[serde(default)]
    categorical_props: BTreeMap<String, String>,
    #[serde(default)]
    description: String,
}

#[derive(Serialize, Deserialize)]
struct TweetLine {
    user_id: String,
    timestamp: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct EdgeRow {
    src: String,
    dst: String,
    relation: Relation,
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S")
        .ok()
        .map(|n| n.and_utc())
}

pub fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Loads and validates a dataset from the three interchange files.
pub fn load_dataset(
    user_path: &Path,
    tweet_path: &Path,
    edge_path: &Path,
) -> Result<Dataset, CorpusError> {
    let user_lines: Vec<UserLine> = read_lines(user_path)?;
    let mut users: Vec<UserRecord> = Vec::with_capacity(user_lines.len());
    let mut pos: HashMap<String, usize> = HashMap::new();
    for u in user_lines {
        if pos.insert(u.id.clone(), users.len()).is_some() {
            return Err(CorpusError::DuplicateUser(u.id));
        }
        users.push(UserRecord {
            id: u.id,
            label: u.label,
            numeric_props: u.numeric_props,
            categorical_props: u.categorical_props,
            description: u.description,
            tweets: Vec::new(),
        });
    }

    let file = File::open(tweet_path).map_err(|e| io_err(tweet_path, e))?;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(tweet_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| CorpusError::Parse {
            path: tweet_path.display().to_string(),
            line: n + 1,
            message,
        };
        let t: TweetLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let timestamp = parse_timestamp(&t.timestamp)
            .ok_or_else(|| parse_err(format!("bad timestamp {:?}", t.timestamp)))?;
        let &i = pos.get(&t.user_id).ok_or_else(|| CorpusError::UnknownUser {
            context: "tweet",
            id: t.user_id.clone(),
        })?;
        users[i].tweets.push(Tweet {
            timestamp,
            text: t.text,
        });
    }

    let mut reader = csv::Reader::from_path(edge_path).map_err(|e| CorpusError::Parse {
        path: edge_path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut edges = Vec::new();
    for row in reader.deserialize::<EdgeRow>() {
        let row = row.map_err(|e| CorpusError::Parse {
            path: edge_path.display().to_string(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        edges.push(Edge {
            src: row.src,
            dst: row.dst,
            relation: row.relation,
        });
    }
    Dataset::new(users, edges)
}

/// The three files' contents, byte-exact as written by [`save_dataset`].
pub fn serialize_dataset(dataset: &Dataset) -> Result<(Vec<u8>, Vec<u8>, Vec<u8>), CorpusError> {
    let json = |e: serde_json::Error| CorpusError::Serialize(e.to_string());
    let mut users = Vec::new();
    let mut tweets = Vec::new();
    for u in dataset.users() {
        let line = UserLine {
            id: u.id.clone(),
            label: u.label,
            numeric_props: u.numeric_props.clone(),
            categorical_props: u.categorical_props.clone(),
            description: u.description.clone(),
        };
        serde_json::to_writer(&mut users, &line).map_err(json)?;
        users.push(b'\n');
        for t in &u.tweets {
            let line = TweetLine {
                user_id: u.id.clone(),
                timestamp: format_timestamp(&t.timestamp),
                text: t.text.clone(),
            };
            serde_json::to_writer(&mut tweets, &line).map_err(json)?;
            tweets.push(b'\n');
        }
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    for e in dataset.edges() {
        writer
            .serialize(EdgeRow {
                src: e.src.clone(),
                dst: e.dst.clone(),
                relation: e.relation,
            })
            .map_err(|e| CorpusError::Serialize(e.to_string()))?;
    }
    if dataset.edges().is_empty() {
        writer
            .write_record(["src", "dst", "relation"])
            .map_err(|e| CorpusError::Serialize(e.to_string()))?;
    }
    let edges = writer
        .into_inner()
        .map_err(|e| CorpusError::Serialize(e.to_string()))?;
    Ok((users, tweets, edges))
}

pub fn save_dataset(
    dataset: &Dataset,
    user_path: &Path,
    tweet_path: &Path,
    edge_path: &Path,
) -> Result<(), CorpusError> {
    let (users, tweets, edges) = serialize_dataset(dataset)?;
    for (path, bytes) in [(user_path, users), (tweet_path, tweets), (edge_path, edges)] {
        let mut f = File::create(path).map_err(|e| io_err(path, e))?;
        f.write_all(&bytes).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

/// Hex SHA-256 over the serialized files.
pub fn dataset_digest(dataset: &Dataset) -> Result<String, CorpusError> {
    let (u, t, e) = serialize_dataset(dataset)?;
    let mut h = Sha256::new();
    for part in [u, t, e] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(&part);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
