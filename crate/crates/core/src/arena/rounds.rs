use std::path::Path;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::store::save_round;
use super::{ArenaConfig, ArenaError};
use crate::corpus::{dataset_digest, split_dataset, Dataset, Label, Split, Tweet};
use crate::detector::{train_classifier, EnsembleDetector, RelGraph, RgcnClassifier, ScoringContext, TrainReport};
use crate::generator::{
    build_preference_pairs, dpo_train, sft_examples, sft_train, GenerationParams, GeneratorError, PolicyModel, Vocab,
};
use crate::seeding::{derive_seed, substream};
use crate::textfeat::Featurizer;

// Phase tags for derive_seed(master, &[round, PHASE]).
pub(crate) const PAIRS: u64 = 1;
pub(crate) const REPLACE: u64 = 2;
pub(crate) const DETECTOR: u64 = 3;
pub(crate) const POLICY: u64 = 4;
pub(crate) const SPLIT: u64 = 5;
pub(crate) const EVAL: u64 = 6;

/// Copy of `dataset` in which every bot's tweets are freshly sampled from
/// `policy`: `min(original count, cap)` tweets, generated `l` at a time and
/// stamped with the bot's most recent original timestamps. Bot `b` samples on
/// ChaCha stream `b` of `seed`. Humans and edges are untouched.
pub fn replace_bot_tweets(
    dataset: &Dataset,
    policy: &PolicyModel,
    contexts: &[Vec<f64>],
    params: &GenerationParams,
    cap: usize,
    seed: u64,
) -> Result<Dataset, GeneratorError> {
    if contexts.len() != dataset.len() {
        return Err(GeneratorError::InvalidArgument(format!(
            "{} contexts for {} users",
            contexts.len(),
            dataset.len()
        )));
    }
    let l = policy.config.tweets_per_response;
    let replacements: Vec<(usize, Vec<Tweet>)> = dataset
        .bot_indices()
        .into_par_iter()
        .map(|b| {
            let old = &dataset.users()[b].tweets;
            let count = old.len().min(cap);
            let mut rng = substream(seed, b as u64);
            let cands = policy.sample(&contexts[b], params, count.div_ceil(l), &mut rng)?;
            let texts = cands.iter().flat_map(|c| policy.decode(&c.response));
            let tweets = old[old.len() - count..]
                .iter()
                .zip(texts)
                .map(|(t, text)| Tweet {
                    timestamp: t.timestamp,
                    text,
                })
                .collect();
            Ok((b, tweets))
        })
        .collect::<Result<_, GeneratorError>>()?;
    Ok(dataset.with_tweets(&replacements))
}

/// Pair-set summary for one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub round: usize,
    pub draws: usize,
    pub pairs: usize,
    pub ties: usize,
    pub mean_chosen: f64,
    pub mean_rejected: f64,
    pub dpo_loss_first: f64,
    pub dpo_loss_last: f64,
}

/// What round `round` hands to the next one: pi^round, f^0..f^round and
/// D^round.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundState {
    pub round: usize,
    pub policy: PolicyModel,
    pub members: Vec<RgcnClassifier>,
    pub dataset: Dataset,
}

/// Checkpoints of a whole run: pi^0..pi^K and f^0..f^K plus per-round
/// ensemble weights, dataset digests and pair statistics (rounds 1..K).
#[derive(Clone, Debug, PartialEq)]
pub struct RoundArtifacts {
    pub policies: Vec<PolicyModel>,
    pub classifiers: Vec<RgcnClassifier>,
    pub weights: Vec<Vec<f64>>,
    pub digests: Vec<String>,
    pub pair_stats: Vec<PairStats>,
}

impl RoundArtifacts {
    pub fn rounds(&self) -> usize {
        self.policies.len() - 1
    }

    pub fn ensemble(&self, round: usize, strategy: crate::detector::WeightStrategy) -> Result<EnsembleDetector, ArenaError> {
        Ok(EnsembleDetector::new(self.classifiers[..=round].to_vec(), strategy)?)
    }
}

/// Fixed per-run state derived from the original dataset D^0: features,
/// split, policy contexts and bot list.
pub struct Arena<'a> {
    pub config: ArenaConfig,
    dataset: &'a Dataset,
    featurizer: Featurizer,
    graph: RelGraph,
    split: Split,
    contexts: Vec<Vec<f64>>,
    labels: Vec<Label>,
    bots: Vec<usize>,
}

impl<'a> Arena<'a> {
    pub fn new(config: ArenaConfig, dataset: &'a Dataset) -> Result<Self, ArenaError> {
        config.validate()?;
        let bots = dataset.bot_indices();
        if bots.is_empty() {
            return Err(GeneratorError::NoBots.into());
        }
        let featurizer = Featurizer::fit(dataset, config.features.clone())?;
        let split = split_dataset(dataset, config.split, derive_seed(config.seed, &[0, SPLIT]))?;
        let contexts = config.context.encode_all(dataset);
        Ok(Self {
            graph: RelGraph::from_dataset(dataset),
            labels: dataset.labels(),
            featurizer,
            split,
            contexts,
            bots,
            dataset,
            config,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn graph(&self) -> &RelGraph {
        &self.graph
    }

    pub fn split(&self) -> &Split {
        &self.split
    }

    pub fn contexts(&self) -> &[Vec<f64>] {
        &self.contexts
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    fn seed(&self, round: usize, phase: u64) -> u64 {
        derive_seed(self.config.seed, &[round as u64, phase])
    }

    /// pi^0: optional likelihood pretraining on all users, then fine-tuning
    /// on the humans of the training split.
    pub fn initial_policy(&self) -> Result<PolicyModel, ArenaError> {
        let texts = self.dataset.users().iter().flat_map(|u| u.tweets.iter().map(|t| t.text.as_str()));
        let vocab = Vocab::build(texts, self.config.vocab_size)?;
        let seed = self.seed(0, POLICY);
        let mut policy = PolicyModel::init(vocab, self.config.policy.clone(), seed);
        if self.config.pretrain.epochs > 0 {
            let everyone: Vec<usize> = (0..self.dataset.len()).collect();
            let (examples, _) = sft_examples(&policy, self.dataset, &self.contexts, &everyone);
            policy = sft_train(&policy, &examples, &self.config.pretrain, derive_seed(seed, &[1]))?.0;
        }
        let humans: Vec<usize> = self.split.train.iter().copied().filter(|&i| self.labels[i].is_human()).collect();
        let (examples, _) = sft_examples(&policy, self.dataset, &self.contexts, &humans);
        let (policy, losses) = sft_train(&policy, &examples, &self.config.sft, derive_seed(seed, &[2]))?;
        info!("sft on {} examples, epoch losses {losses:?}", examples.len());
        Ok(policy)
    }

    /// f^round trained on `dataset` (same users, graph and split as D^0).
    pub fn train_detector(&self, dataset: &Dataset, round: usize) -> Result<RgcnClassifier, ArenaError> {
        Ok(self.train_detector_report(dataset, round)?.0)
    }

    /// [`Arena::train_detector`] with its training report.
    pub fn train_detector_report(&self, dataset: &Dataset, round: usize) -> Result<(RgcnClassifier, TrainReport), ArenaError> {
        let features = self.featurizer.featurize(dataset)?;
        let (model, report) = train_classifier(
            &features,
            &self.graph,
            &self.labels,
            &self.split.train,
            &self.split.val,
            &self.config.detector,
            self.seed(round, DETECTOR),
        )?;
        info!(
            "round {round}: detector best epoch {} val F1 {:.4}",
            report.best_epoch, report.best_val_f1
        );
        Ok((model, report))
    }

    pub fn initial_state(&self) -> Result<RoundState, ArenaError> {
        Ok(RoundState {
            round: 0,
            policy: self.initial_policy()?,
            members: vec![self.train_detector(self.dataset, 0)?],
            dataset: self.dataset.clone(),
        })
    }

    pub fn replace(&self, dataset: &Dataset, policy: &PolicyModel, seed: u64) -> Result<Dataset, ArenaError> {
        Ok(replace_bot_tweets(
            dataset,
            policy,
            &self.contexts,
            &self.config.sampling,
            self.config.replace_cap,
            seed,
        )?)
    }

    /// One adversarial round from the previous round's state. A round whose
    /// draws all tie leaves the policy unchanged.
    pub fn run_round(&self, prev: &RoundState) -> Result<(RoundState, PairStats), ArenaError> {
        let k = prev.round + 1;
        self.round_inner(prev, k).map_err(|e| e.in_round(k))
    }

    fn round_inner(&self, prev: &RoundState, k: usize) -> Result<(RoundState, PairStats), ArenaError> {
        let cfg = &self.config;
        let ensemble = EnsembleDetector::new(prev.members.clone(), cfg.strategy)?;
        let scorer = ScoringContext::new(&ensemble, &self.featurizer, &prev.dataset)?;
        let pairs = build_preference_pairs(
            &prev.policy,
            &scorer,
            &self.contexts,
            &self.bots,
            cfg.pairs,
            cfg.candidates,
            &cfg.sampling,
            self.seed(k, PAIRS),
        )?;
        let dataset = self.replace(&prev.dataset, &prev.policy, self.seed(k, REPLACE))?;
        let mut members = prev.members.clone();
        members.push(self.train_detector(&dataset, k)?);
        let (policy, losses) = if pairs.pairs.is_empty() {
            warn!("round {k}: every draw tied; policy unchanged");
            (prev.policy.clone(), Vec::new())
        } else {
            dpo_train(&prev.policy, &pairs.pairs, &cfg.dpo)?
        };
        let (mean_chosen, mean_rejected) = pairs.mean_scores();
        let stats = PairStats {
            round: k,
            draws: pairs.draws.len(),
            pairs: pairs.pairs.len(),
            ties: pairs.ties,
            mean_chosen,
            mean_rejected,
            dpo_loss_first: losses.first().copied().unwrap_or(f64::NAN),
            dpo_loss_last: losses.last().copied().unwrap_or(f64::NAN),
        };
        info!(
            "round {k}: {} pairs, {} ties, chosen {mean_chosen:.4} rejected {mean_rejected:.4}",
            stats.pairs, stats.ties
        );
        Ok((
            RoundState {
                round: k,
                policy,
                members,
                dataset,
            },
            stats,
        ))
    }

    /// The full K-round loop. With `out`, every round's checkpoints are
    /// written to `out/round_XX` as soon as the round finishes.
    pub fn run(&self, out: Option<&Path>) -> Result<RoundArtifacts, ArenaError> {
        let mut state = self.initial_state().map_err(|e| e.in_round(0))?;
        let mut arts = RoundArtifacts {
            policies: vec![state.policy.clone()],
            classifiers: state.members.clone(),
            weights: vec![vec![1.0]],
            digests: vec![dataset_digest(&state.dataset)?],
            pair_stats: Vec::new(),
        };
        if let Some(dir) = out {
            save_round(dir, &state, self.config.strategy, None)?;
        }
        for _ in 0..self.config.rounds {
            let (next, stats) = self.run_round(&state)?;
            if let Some(dir) = out {
                save_round(dir, &next, self.config.strategy, Some(&stats))?;
            }
            arts.policies.push(next.policy.clone());
            arts.classifiers.push(next.members.last().expect("non-empty").clone());
            arts.weights.push(EnsembleDetector::new(next.members.clone(), self.config.strategy)?.weights().to_vec());
            arts.digests.push(dataset_digest(&next.dataset)?);
            arts.pair_stats.push(stats);
            state = next;
        }
        Ok(arts)
    }
}
