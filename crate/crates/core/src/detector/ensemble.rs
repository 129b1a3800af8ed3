use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::forward::{forward, forward_full, rescore_target, Activations, RelGraph};
use super::model::RgcnClassifier;
use super::DetectorError;
use crate::corpus::Dataset;
use crate::textfeat::{FeatureMatrix, Featurizer};

/// How ensemble weights are spread over rounds `0..=k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum WeightStrategy {
    Uniform,
    /// All weight on the latest member.
    Greedy,
    /// `w_j ∝ exp(-alpha (k - j))`.
    Exp { alpha: f64 },
}

impl fmt::Display for WeightStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightStrategy::Uniform => write!(f, "uniform"),
            WeightStrategy::Greedy => write!(f, "greedy"),
            WeightStrategy::Exp { alpha } => write!(f, "exp:{alpha}"),
        }
    }
}

impl FromStr for WeightStrategy {
    type Err = DetectorError;

    /// Accepts `uniform`, `greedy` and `exp:<alpha>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(WeightStrategy::Uniform),
            "greedy" => Ok(WeightStrategy::Greedy),
            _ => {
                let alpha = s
                    .strip_prefix("exp:")
                    .and_then(|a| a.parse::<f64>().ok())
                    .filter(|a| a.is_finite() && *a >= 0.0)
                    .ok_or_else(|| DetectorError::UnknownStrategy(s.to_string()))?;
                Ok(WeightStrategy::Exp { alpha })
            }
        }
    }
}

impl TryFrom<String> for WeightStrategy {
    type Error = DetectorError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<WeightStrategy> for String {
    fn from(s: WeightStrategy) -> Self {
        s.to_string()
    }
}

/// Normalized weights for members `0..=k`.
pub fn make_weights(strategy: WeightStrategy, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = match strategy {
        WeightStrategy::Uniform => vec![1.0; k + 1],
        WeightStrategy::Greedy => (0..=k).map(|j| if j == k { 1.0 } else { 0.0 }).collect(),
        WeightStrategy::Exp { alpha } => (0..=k).map(|j| (-alpha * (k - j) as f64).exp()).collect(),
    };
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Weighted vote of the per-round classifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleDetector {
    members: Vec<RgcnClassifier>,
    weights: Vec<f64>,
    strategy: WeightStrategy,
}

impl EnsembleDetector {
    pub fn new(members: Vec<RgcnClassifier>, strategy: WeightStrategy) -> Result<Self, DetectorError> {
        if members.is_empty() {
            return Err(DetectorError::EmptyEnsemble);
        }
        let weights = make_weights(strategy, members.len() - 1);
        Self::check_members(&members)?;
        Ok(Self { members, weights, strategy })
    }

    pub fn single(member: RgcnClassifier) -> Self {
        Self {
            members: vec![member],
            weights: vec![1.0],
            strategy: WeightStrategy::Greedy,
        }
    }

    fn check_members(members: &[RgcnClassifier]) -> Result<(), DetectorError> {
        let dims = members[0].arch.input_dims;
        for m in &members[1..] {
            if m.arch.input_dims != dims {
                return Err(DetectorError::DimMismatch {
                    expected: dims,
                    found: m.arch.input_dims,
                });
            }
        }
        Ok(())
    }

    /// Appends the next round's classifier and recomputes the weights.
    pub fn push(&mut self, member: RgcnClassifier) -> Result<(), DetectorError> {
        if member.arch.input_dims != self.members[0].arch.input_dims {
            return Err(DetectorError::DimMismatch {
                expected: self.members[0].arch.input_dims,
                found: member.arch.input_dims,
            });
        }
        self.members.push(member);
        self.weights = make_weights(self.strategy, self.members.len() - 1);
        Ok(())
    }

    /// The first `rounds + 1` members, reweighted.
    pub fn truncated(&self, rounds: usize) -> Result<Self, DetectorError> {
        let take = (rounds + 1).min(self.members.len());
        Self::new(self.members[..take].to_vec(), self.strategy)
    }

    pub fn with_strategy(&self, strategy: WeightStrategy) -> Self {
        Self {
            weights: make_weights(strategy, self.members.len() - 1),
            members: self.members.clone(),
            strategy,
        }
    }

    pub fn members(&self) -> &[RgcnClassifier] {
        &self.members
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn strategy(&self) -> WeightStrategy {
        self.strategy
    }

    pub fn latest(&self) -> &RgcnClassifier {
        self.members.last().expect("non-empty")
    }

    fn active(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().copied().enumerate().filter(|(_, w)| *w != 0.0)
    }

    /// Weighted combination of per-member outputs; zero-weight members are
    /// skipped so a one-hot weight vector reproduces that member exactly.
    pub fn combine(&self, member_probs: &[Vec<f64>]) -> Vec<f64> {
        let n = member_probs.iter().map(Vec::len).max().unwrap_or(0);
        let mut out = vec![0.0; n];
        for (j, w) in self.active() {
            for (o, p) in out.iter_mut().zip(&member_probs[j]) {
                *o += w * p;
            }
        }
        out.iter_mut().for_each(|p| *p = p.clamp(0.0, 1.0));
        out
    }

    /// Per-user probability of the human class.
    pub fn probability(&self, features: &FeatureMatrix, graph: &RelGraph) -> Result<Vec<f64>, DetectorError> {
        let mut member_probs = vec![Vec::new(); self.members.len()];
        for (j, _) in self.active() {
            member_probs[j] = forward(&self.members[j], features, graph)?;
        }
        Ok(self.combine(&member_probs))
    }
}

/// Cached member states for one dataset so that single-user tweet
/// substitutions can be rescored without a full forward pass.
pub struct ScoringContext<'a> {
    ensemble: &'a EnsembleDetector,
    featurizer: &'a Featurizer,
    dataset: &'a Dataset,
    features: FeatureMatrix,
    graph: RelGraph,
    caches: Vec<Option<Activations>>,
    baseline: Vec<f64>,
}

impl<'a> ScoringContext<'a> {
    pub fn new(ensemble: &'a EnsembleDetector, featurizer: &'a Featurizer, dataset: &'a Dataset) -> Result<Self, DetectorError> {
        let features = featurizer.featurize(dataset)?;
        let graph = RelGraph::from_dataset(dataset);
        let mut caches: Vec<Option<Activations>> = vec![None; ensemble.members.len()];
        let mut member_probs = vec![Vec::new(); ensemble.members.len()];
        for (j, _) in ensemble.active() {
            let act = forward_full(&ensemble.members[j], &features, &graph)?;
            member_probs[j] = act.human();
            caches[j] = Some(act);
        }
        let baseline = ensemble.combine(&member_probs);
        Ok(Self {
            ensemble,
            featurizer,
            dataset,
            features,
            graph,
            caches,
            baseline,
        })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn graph(&self) -> &RelGraph {
        &self.graph
    }

    /// Ensemble probabilities on the unmodified dataset.
    pub fn baseline(&self) -> &[f64] {
        &self.baseline
    }

    pub fn index_of(&self, user_id: &str) -> Result<usize, DetectorError> {
        self.dataset
            .index_of(user_id)
            .ok_or_else(|| DetectorError::UnknownUser(user_id.to_string()))
    }

    /// Human probability of `user_id` if its tweets were `candidate`, with
    /// every other user and edge unchanged.
    pub fn score_candidate<S: AsRef<str>>(&self, user_id: &str, candidate: &[S]) -> Result<f64, DetectorError> {
        Ok(self.score_index(self.index_of(user_id)?, candidate))
    }

    pub fn score_index<S: AsRef<str>>(&self, target: usize, candidate: &[S]) -> f64 {
        let embed = self.featurizer.tweet_embedding(candidate);
        let mut p = 0.0;
        for (j, w) in self.ensemble.active() {
            let cache = self.caches[j].as_ref().expect("cached for active members");
            p += w * rescore_target(&self.ensemble.members[j], cache, &self.features, &self.graph, target, &embed);
        }
        p.clamp(0.0, 1.0)
    }

    /// Feature matrix with only the target's tweet row replaced.
    pub fn features_with_candidate<S: AsRef<str>>(&self, target: usize, candidate: &[S]) -> FeatureMatrix {
        let mut f = self.features.clone();
        f.tweet.row_mut(target).copy_from_slice(&self.featurizer.tweet_embedding(candidate));
        f
    }

    /// Reference route for [`ScoringContext::score_index`]: a complete
    /// forward pass over the substituted feature matrix.
    pub fn score_index_full<S: AsRef<str>>(&self, target: usize, candidate: &[S]) -> Result<f64, DetectorError> {
        let f = self.features_with_candidate(target, candidate);
        Ok(self.ensemble.probability(&f, &self.graph)?[target])
    }
}
