//! Deterministic text embedding, account-feature encoding and template user
//! summaries.

mod embed;
mod summary;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, UserRecord};
use crate::diffmath::Tensor;

pub use embed::{cosine, embed_text, fnv1a, tokenize, EmbedConfig};
pub use summary::{summarize_neighbourhood, summarize_user, SummaryConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("need at least {needed} users to fit statistics, got {got}")]
    TooFewUsers { needed: usize, got: usize },
    #[error("user {user:?} lacks numeric property {property:?}")]
    MissingNumeric { user: String, property: String },
    #[error("user {user:?} lacks categorical property {property:?}")]
    MissingCategorical { user: String, property: String },
    #[error("categorical property {property:?} has unseen value {value:?}")]
    UnseenCategory { property: String, value: String },
}

/// Per-property population mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericStats {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NumericStats {
    /// Fits over the union of property names present on the users; every user
    /// must carry every property.
    pub fn fit(users: &[&UserRecord]) -> Result<Self, FeatureError> {
        if users.len() < 2 {
            return Err(FeatureError::TooFewUsers { needed: 2, got: users.len() });
        }
        let names: Vec<String> = users
            .iter()
            .flat_map(|u| u.numeric_props.keys().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let n = users.len() as f64;
        let mut mean = Vec::with_capacity(names.len());
        let mut std = Vec::with_capacity(names.len());
        for name in &names {
            let mut values = Vec::with_capacity(users.len());
            for u in users {
                values.push(*u.numeric_props.get(name).ok_or_else(|| FeatureError::MissingNumeric {
                    user: u.id.clone(),
                    property: name.clone(),
                })?);
            }
            // sorted summation keeps the statistics independent of user order
            values.sort_by(f64::total_cmp);
            let m = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            mean.push(m);
            std.push(var.sqrt());
        }
        Ok(Self { names, mean, std })
    }

    pub fn apply(&self, user: &UserRecord) -> Result<Vec<f64>, FeatureError> {
        self.names
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let v = *user.numeric_props.get(name).ok_or_else(|| FeatureError::MissingNumeric {
                    user: user.id.clone(),
                    property: name.clone(),
                })?;
                Ok(if self.std[i] > 0.0 { (v - self.mean[i]) / self.std[i] } else { 0.0 })
            })
            .collect()
    }
}

/// Z-scores every user's numeric properties against the population itself.
pub fn normalize_numeric(users: &[&UserRecord]) -> Result<Vec<Vec<f64>>, FeatureError> {
    let stats = NumericStats::fit(users)?;
    users.iter().map(|u| stats.apply(u)).collect()
}

/// Ordered categorical properties with their value domains.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSchema {
    pub properties: Vec<(String, Vec<String>)>,
}

impl CategoricalSchema {
    /// Domains collected from the users, properties and values sorted.
    pub fn infer(users: &[&UserRecord]) -> Self {
        let mut domains: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for u in users {
            for (k, v) in &u.categorical_props {
                domains.entry(k.clone()).or_default().insert(v.clone());
            }
        }
        Self {
            properties: domains
                .into_iter()
                .map(|(k, vs)| (k, vs.into_iter().collect()))
                .collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.properties.iter().map(|(_, d)| d.len()).sum()
    }

    pub fn encode(&self, user: &UserRecord) -> Result<Vec<f64>, FeatureError> {
        let mut out = Vec::with_capacity(self.width());
        for (name, domain) in &self.properties {
            let value = user.categorical_props.get(name).ok_or_else(|| FeatureError::MissingCategorical {
                user: user.id.clone(),
                property: name.clone(),
            })?;
            let hit = domain.iter().position(|d| d == value).ok_or_else(|| FeatureError::UnseenCategory {
                property: name.clone(),
                value: value.clone(),
            })?;
            out.extend((0..domain.len()).map(|i| if i == hit { 1.0 } else { 0.0 }));
        }
        Ok(out)
    }
}

pub fn encode_categorical(
    schema: &CategoricalSchema,
    users: &[&UserRecord],
) -> Result<Vec<Vec<f64>>, FeatureError> {
    users.iter().map(|u| schema.encode(u)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub embed: EmbedConfig,
    /// Only the most recent tweets are pooled.
    pub tweet_cap: usize,
    /// Fixed categorical domains, so that datasets cut from one corpus share
    /// an input layout; inferred from the dataset when absent.
    pub categorical: Option<CategoricalSchema>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            embed: EmbedConfig::default(),
            tweet_cap: 20,
            categorical: None,
        }
    }
}

/// The four input groups for one user.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    pub desc_embed: Vec<f64>,
    pub tweet_embed: Vec<f64>,
    pub numeric: Vec<f64>,
    pub categorical: Vec<f64>,
}

/// Row-aligned feature matrices for a whole dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub desc: Tensor,
    pub tweet: Tensor,
    pub numeric: Tensor,
    pub categorical: Tensor,
}

impl FeatureMatrix {
    pub fn len(&self) -> usize {
        self.desc.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(desc, tweet, numeric, categorical)` widths.
    pub fn dims(&self) -> [usize; 4] {
        [self.desc.cols(), self.tweet.cols(), self.numeric.cols(), self.categorical.cols()]
    }

    pub fn bundle(&self, i: usize) -> FeatureBundle {
        FeatureBundle {
            desc_embed: self.desc.row(i).to_vec(),
            tweet_embed: self.tweet.row(i).to_vec(),
            numeric: self.numeric.row(i).to_vec(),
            categorical: self.categorical.row(i).to_vec(),
        }
    }
}

/// Population statistics plus embedding settings; pure function of its inputs
/// once fitted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub config: FeatureConfig,
    pub numeric: NumericStats,
    pub categorical: CategoricalSchema,
}

impl Featurizer {
    pub fn fit(dataset: &Dataset, config: FeatureConfig) -> Result<Self, FeatureError> {
        let users: Vec<&UserRecord> = dataset.users().iter().collect();
        Ok(Self {
            numeric: NumericStats::fit(&users)?,
            categorical: config.categorical.clone().unwrap_or_else(|| CategoricalSchema::infer(&users)),
            config,
        })
    }

    /// Mean embedding over the most recent `tweet_cap` texts (input order is
    /// chronological); zero when there are none.
    pub fn tweet_embedding<S: AsRef<str>>(&self, texts: &[S]) -> Vec<f64> {
        let dim = self.config.embed.dim;
        let start = texts.len().saturating_sub(self.config.tweet_cap);
        let recent = &texts[start..];
        let mut acc = vec![0.0; dim];
        for t in recent {
            for (a, v) in acc.iter_mut().zip(embed_text(t.as_ref(), &self.config.embed)) {
                *a += v;
            }
        }
        if !recent.is_empty() {
            let n = recent.len() as f64;
            acc.iter_mut().for_each(|a| *a /= n);
        }
        acc
    }

    pub fn bundle(&self, user: &UserRecord) -> Result<FeatureBundle, FeatureError> {
        let texts: Vec<&str> = user.tweets.iter().map(|t| t.text.as_str()).collect();
        Ok(FeatureBundle {
            desc_embed: embed_text(&user.description, &self.config.embed),
            tweet_embed: self.tweet_embedding(&texts),
            numeric: self.numeric.apply(user)?,
            categorical: self.categorical.encode(user)?,
        })
    }

    pub fn featurize(&self, dataset: &Dataset) -> Result<FeatureMatrix, FeatureError> {
        let n = dataset.len();
        let dim = self.config.embed.dim;
        let mut desc = Vec::with_capacity(n * dim);
        let mut tweet = Vec::with_capacity(n * dim);
        let mut numeric = Vec::with_capacity(n * self.numeric.names.len());
        let mut categorical = Vec::with_capacity(n * self.categorical.width());
        for u in dataset.users() {
            let b = self.bundle(u)?;
            desc.extend(b.desc_embed);
            tweet.extend(b.tweet_embed);
            numeric.extend(b.numeric);
            categorical.extend(b.categorical);
        }
        let t = |cols: usize, data: Vec<f64>| Tensor::from_vec(n, cols, data).expect("row widths are fixed");
        Ok(FeatureMatrix {
            desc: t(dim, desc),
            tweet: t(dim, tweet),
            numeric: t(self.numeric.names.len(), numeric),
            categorical: t(self.categorical.width(), categorical),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    fn user(id: &str, props: &[(&str, f64)], cats: &[(&str, &str)]) -> UserRecord {
        UserRecord {
            id: id.into(),
            label: Label::Human,
            numeric_props: props.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            categorical_props: cats.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            description: String::new(),
            tweets: Vec::new(),
        }
    }

    #[test]
    fn zscore_examples() {
        let a = user("a", &[("x", 0.0), ("c", 7.0)], &[]);
        let b = user("b", &[("x", 10.0), ("c", 7.0)], &[]);
        let out = normalize_numeric(&[&a, &b]).unwrap();
        // names sort as ["c", "x"]
        assert_eq!(out, vec![vec![0.0, -1.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn one_hot_blocks() {
        let a = user("a", &[], &[("verified", "true"), ("tier", "b")]);
        let schema = CategoricalSchema {
            properties: vec![
                ("verified".into(), vec!["true".into(), "false".into()]),
                ("tier".into(), vec!["a".into(), "b".into(), "c".into()]),
            ],
        };
        assert_eq!(schema.encode(&a).unwrap(), vec![1.0, 0.0, 0.0, 1.0, 0.0]);
        let bad = user("b", &[], &[("verified", "maybe"), ("tier", "a")]);
        let err = schema.encode(&bad).unwrap_err();
        assert!(err.to_string().contains("verified"));
    }
}
