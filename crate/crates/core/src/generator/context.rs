use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, UserRecord};
use crate::textfeat::{embed_text, summarize_neighbourhood, summarize_user, EmbedConfig, SummaryConfig};

/// Turns a user's own summary and a summary of its neighbourhood into the
/// policy's conditioning vector `[embed(S_v), embed(S_N)]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextEncoder {
    pub embed: EmbedConfig,
    pub summary: SummaryConfig,
}

impl ContextEncoder {
    pub fn dim(&self) -> usize {
        2 * self.embed.dim
    }

    pub fn summaries(&self, user: &UserRecord, neighbours: &[&UserRecord]) -> (String, String) {
        let shown = &neighbours[..neighbours.len().min(self.summary.neighbours)];
        (
            summarize_user(user, shown, &self.summary),
            summarize_neighbourhood(shown, &self.summary),
        )
    }

    pub fn encode(&self, user: &UserRecord, neighbours: &[&UserRecord]) -> Vec<f64> {
        let (own, around) = self.summaries(user, neighbours);
        let mut v = embed_text(&own, &self.embed);
        v.extend(embed_text(&around, &self.embed));
        v
    }

    /// One context per user, neighbours taken in index order.
    pub fn encode_all(&self, dataset: &Dataset) -> Vec<Vec<f64>> {
        let users = dataset.users();
        dataset
            .neighbours()
            .iter()
            .enumerate()
            .map(|(i, ns)| {
                let refs: Vec<&UserRecord> = ns.iter().map(|&j| &users[j]).collect();
                self.encode(&users[i], &refs)
            })
            .collect()
    }
}
