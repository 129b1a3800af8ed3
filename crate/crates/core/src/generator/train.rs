use std::rc::Rc;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pairs::PreferencePair;
use super::policy::{tape_log_probs, PolicyModel, PolicyVars, Response, SequenceBatch};
use super::GeneratorError;
use crate::corpus::Dataset;
use crate::diffmath::{AdamConfig, AdamState, Graph, SparseMatrix, Tensor};

/// A context and the reference response the policy should reproduce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub user: usize,
    pub context: Vec<f64>,
    pub response: Response,
}

/// Non-overlapping runs of `l` consecutive tweets from each listed user;
/// users with fewer than `l` tweets are skipped with a warning and returned.
pub fn sft_examples(
    policy: &PolicyModel,
    dataset: &Dataset,
    contexts: &[Vec<f64>],
    users: &[usize],
) -> (Vec<SftExample>, Vec<usize>) {
    let l = policy.config.tweets_per_response;
    let mut out = Vec::new();
    let mut skipped = Vec::new();
    for &u in users {
        let user = &dataset.users()[u];
        if user.tweets.len() < l {
            warn!("user {} has {} tweets, fewer than {l}; skipped", user.id, user.tweets.len());
            skipped.push(u);
            continue;
        }
        for chunk in user.tweets.chunks_exact(l) {
            out.push(SftExample {
                user: u,
                context: contexts[u].clone(),
                response: chunk
                    .iter()
                    .map(|t| policy.vocab.encode_tweet(&t.text, policy.config.max_len))
                    .collect(),
            });
        }
    }
    (out, skipped)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftConfig {
    pub epochs: usize,
    /// Examples per step; 0 means the full set.
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 64,
            adam: AdamConfig {
                lr: 1e-2,
                ..AdamConfig::default()
            },
        }
    }
}

fn batch_of<'a>(examples: impl Iterator<Item = &'a SftExample>) -> Result<SequenceBatch, GeneratorError> {
    let (ctx, resp): (Vec<&[f64]>, Vec<&Response>) = examples.map(|e| (e.context.as_slice(), &e.response)).unzip();
    SequenceBatch::new(&ctx, &resp)
}

fn grads_of(g: &mut Graph, vars: &PolicyVars, loss: crate::diffmath::Var, policy: &PolicyModel) -> Result<Vec<Tensor>, GeneratorError> {
    let grads = g.backward(loss)?;
    Ok(vars
        .0
        .iter()
        .zip(policy.tensors())
        .map(|(v, t)| grads.get_or_zeros(*v, t.shape()))
        .collect())
}

fn sft_batch_loss(policy: &PolicyModel, batch: &SequenceBatch) -> Result<(f64, Vec<Tensor>), GeneratorError> {
    let mut g = Graph::new();
    let vars = PolicyVars::params(&mut g, policy)?;
    let (picked, _) = tape_log_probs(&mut g, &vars, batch)?;
    let mean = g.mean(picked)?;
    let loss = g.scale(mean, -1.0)?;
    let value = g.value(loss).item()?;
    Ok((value, grads_of(&mut g, &vars, loss, policy)?))
}

/// Mean per-token negative log-likelihood and its gradient.
pub fn sft_loss(policy: &PolicyModel, examples: &[SftExample]) -> Result<(f64, Vec<Tensor>), GeneratorError> {
    if examples.is_empty() {
        return Err(GeneratorError::NoExamples);
    }
    sft_batch_loss(policy, &batch_of(examples.iter())?)
}

/// Mean per-token NLL through the plain inference route.
pub fn mean_nll(policy: &PolicyModel, examples: &[SftExample]) -> Result<f64, GeneratorError> {
    if examples.is_empty() {
        return Err(GeneratorError::NoExamples);
    }
    let mut total = 0.0;
    let mut tokens = 0usize;
    for e in examples {
        total -= policy.log_prob(&e.context, &e.response)?;
        tokens += e.response.iter().map(Vec::len).sum::<usize>();
    }
    Ok(total / tokens as f64)
}

/// Adam on [`sft_loss`] over shuffled minibatches. Returns the trained policy
/// and the mean batch loss of every epoch.
pub fn sft_train(
    policy: &PolicyModel,
    examples: &[SftExample],
    config: &SftConfig,
    seed: u64,
) -> Result<(PolicyModel, Vec<f64>), GeneratorError> {
    if examples.is_empty() {
        return Err(GeneratorError::NoExamples);
    }
    let mut policy = policy.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new(config.adam.clone(), &policy.tensors());
    let size = if config.batch_size == 0 { examples.len() } else { config.batch_size };
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(size) {
            let batch = batch_of(chunk.iter().map(|&i| &examples[i]))?;
            let (loss, grads) = sft_batch_loss(&policy, &batch)?;
            adam.step(&mut policy.tensors_mut(), &grads)?;
            sum += loss;
            batches += 1;
        }
        history.push(sum / batches as f64);
    }
    Ok((policy, history))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpoConfig {
    pub beta: f64,
    pub epochs: usize,
    pub adam: AdamConfig,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.2,
            epochs: 20,
            adam: AdamConfig {
                lr: 5e-3,
                ..AdamConfig::default()
            },
        }
    }
}

/// Chosen responses first, then rejected, plus the `pairs x 2 pairs`
/// difference operator (+1 chosen, -1 rejected).
struct PairBatch {
    sequences: SequenceBatch,
    difference: Rc<SparseMatrix>,
}

impl PairBatch {
    fn new(pairs: &[PreferencePair]) -> Result<Self, GeneratorError> {
        let m = pairs.len();
        let ctx: Vec<&[f64]> = pairs.iter().chain(pairs).map(|p| p.context.as_slice()).collect();
        let resp: Vec<&Response> = pairs.iter().map(|p| &p.chosen).chain(pairs.iter().map(|p| &p.rejected)).collect();
        let trip: Vec<(usize, usize, f64)> = (0..m).flat_map(|i| [(i, i, 1.0), (i, m + i, -1.0)]).collect();
        Ok(Self {
            sequences: SequenceBatch::new(&ctx, &resp)?,
            difference: Rc::new(SparseMatrix::from_triplets(m, 2 * m, &trip)?),
        })
    }

    /// `log pi(y_w|x) - log pi(y_l|x)` under `policy`, as a constant.
    fn reference_margins(&self, policy: &PolicyModel) -> Result<Tensor, GeneratorError> {
        let mut g = Graph::new();
        let vars = PolicyVars::constants(&mut g, policy)?;
        let (_, per_seq) = tape_log_probs(&mut g, &vars, &self.sequences)?;
        let d = g.sparse_matmul(&self.difference, per_seq)?;
        Ok(g.value(d).clone())
    }

    fn loss(&self, policy: &PolicyModel, reference: &Tensor, beta: f64) -> Result<(f64, Vec<Tensor>), GeneratorError> {
        let mut g = Graph::new();
        let vars = PolicyVars::params(&mut g, policy)?;
        let (_, per_seq) = tape_log_probs(&mut g, &vars, &self.sequences)?;
        let d = g.sparse_matmul(&self.difference, per_seq)?;
        let r = g.constant(reference.clone())?;
        let margin = g.sub(d, r)?;
        let margin = g.scale(margin, beta)?;
        let ls = g.log_sigmoid(margin)?;
        let mean = g.mean(ls)?;
        let loss = g.scale(mean, -1.0)?;
        let value = g.value(loss).item()?;
        Ok((value, grads_of(&mut g, &vars, loss, policy)?))
    }
}

/// `-mean log sigmoid(beta [(log pi(y_w) - log ref(y_w)) - (log pi(y_l) - log ref(y_l))])`
/// and its gradient with respect to `policy`.
pub fn dpo_loss(
    policy: &PolicyModel,
    reference: &PolicyModel,
    pairs: &[PreferencePair],
    beta: f64,
) -> Result<(f64, Vec<Tensor>), GeneratorError> {
    if pairs.is_empty() {
        return Err(GeneratorError::NoPairs);
    }
    let batch = PairBatch::new(pairs)?;
    let r = batch.reference_margins(reference)?;
    batch.loss(policy, &r, beta)
}

/// Full-batch Adam on [`dpo_loss`] with the incoming policy frozen as the
/// reference. Returns the new policy and the loss before every step.
pub fn dpo_train(
    policy: &PolicyModel,
    pairs: &[PreferencePair],
    config: &DpoConfig,
) -> Result<(PolicyModel, Vec<f64>), GeneratorError> {
    if pairs.is_empty() {
        return Err(GeneratorError::NoPairs);
    }
    let batch = PairBatch::new(pairs)?;
    let reference = batch.reference_margins(policy)?;
    let mut current = policy.clone();
    let mut adam = AdamState::new(config.adam.clone(), &current.tensors());
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let (loss, grads) = batch.loss(&current, &reference, config.beta)?;
        adam.step(&mut current.tensors_mut(), &grads)?;
        history.push(loss);
    }
    Ok((current, history))
}
