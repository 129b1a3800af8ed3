use serde::{Deserialize, Serialize};

use crate::corpus::UserRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SummaryConfig {
    /// Hard cap on the summary length in characters.
    pub cap: usize,
    pub recent_tweets: usize,
    pub fragment_chars: usize,
    pub description_chars: usize,
    pub neighbours: usize,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self {
            cap: 600,
            recent_tweets: 3,
            fragment_chars: 80,
            description_chars: 160,
            neighbours: 3,
        }
    }
}

fn clip(s: &str, chars: usize) -> String {
    let s = s.trim();
    match s.char_indices().nth(chars) {
        Some((idx, _)) => s[..idx].trim_end().to_owned(),
        None => s.to_owned(),
    }
}

fn count(user: &UserRecord, name: &str) -> String {
    user.numeric_props
        .get(name)
        .map_or_else(|| "unknown".to_owned(), |v| format!("{v:.0}"))
}

/// Extractive profile summary: bio snippet, follower counts, the most recent
/// tweet fragments and a few followed accounts.
pub fn summarize_user(user: &UserRecord, neighbours: &[&UserRecord], config: &SummaryConfig) -> String {
    let mut out = format!("User {}.", user.id);
    let bio = clip(&user.description, config.description_chars);
    if !bio.is_empty() {
        out.push_str(&format!(" Bio: {bio}."));
    }
    out.push_str(&format!(
        " Followers {}, following {}.",
        count(user, "followers"),
        count(user, "following")
    ));
    let recent: Vec<String> = user
        .tweets
        .iter()
        .rev()
        .take(config.recent_tweets)
        .map(|t| clip(&t.text, config.fragment_chars))
        .collect();
    if !recent.is_empty() {
        out.push_str(&format!(" Recent posts: {}.", recent.join(" | ")));
    }
    let follows: Vec<String> = neighbours
        .iter()
        .take(config.neighbours)
        .map(|n| {
            let bio = clip(&n.description, 40);
            if bio.is_empty() {
                n.id.clone()
            } else {
                format!("{} ({bio})", n.id)
            }
        })
        .collect();
    if !follows.is_empty() {
        out.push_str(&format!(" Follows: {}.", follows.join(", ")));
    }
    clip(&out, config.cap)
}

/// Concatenated neighbour summaries, capped like a single summary.
pub fn summarize_neighbourhood(neighbours: &[&UserRecord], config: &SummaryConfig) -> String {
    let parts: Vec<String> = neighbours
        .iter()
        .take(config.neighbours)
        .map(|n| summarize_user(n, &[], config))
        .collect();
    clip(&parts.join(" "), config.cap)
}
