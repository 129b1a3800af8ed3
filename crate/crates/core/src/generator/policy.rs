use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, BOS, EOT, UNK};
use super::GeneratorError;
use crate::diffmath::{DiffError, Graph, SparseMatrix, Tensor, Var};

/// One response: `l` tweets, each a token-id sequence (normally ending in
/// `EOT`).
pub type Response = Vec<Vec<u32>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub context_dim: usize,
    pub hidden: usize,
    /// Token budget per tweet, `EOT` included.
    pub max_len: usize,
    pub tweets_per_response: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            context_dim: 128,
            hidden: 64,
            max_len: 24,
            tweets_per_response: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_k: usize,
    pub top_p: f64,
    pub repetition_penalty: f64,
    pub max_length: usize,
    /// `false` decodes greedily.
    pub sample: bool,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_k: 50,
            top_p: 0.6,
            repetition_penalty: 1.3,
            max_length: 2048,
            sample: true,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<(), GeneratorError> {
        if !(self.temperature > 0.0) || !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GeneratorError::InvalidArgument(format!(
                "temperature {} must be positive and top_p {} in (0, 1]",
                self.temperature, self.top_p
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub response: Response,
    /// Log-probability of `response` under the policy's own (untempered)
    /// distribution.
    pub log_prob: f64,
}

/// Conditional token model: the context vector sets a hidden state, and each
/// step mixes it with the previous token's embedding.
///
/// `h = tanh(x Wc + bc)`, `z_t = tanh(h + E[y_{t-1}])`, `p(y_t) = softmax(z_t Wo + bo)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub config: PolicyConfig,
    pub vocab: Vocab,
    pub context_weight: Tensor,
    pub context_bias: Tensor,
    pub token_embed: Tensor,
    pub out_weight: Tensor,
    pub out_bias: Tensor,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect()).expect("sized")
}

fn log_softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    v.iter_mut().for_each(|x| *x -= lse);
}

impl PolicyModel {
    pub fn init(vocab: Vocab, config: PolicyConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h, v) = (config.context_dim, config.hidden, vocab.len());
        let bc = 1.0 / (c as f64).sqrt();
        let bh = 1.0 / (h as f64).sqrt();
        Self {
            context_weight: uniform(&mut rng, c, h, bc),
            context_bias: uniform(&mut rng, 1, h, bc),
            token_embed: uniform(&mut rng, v, h, 1.0),
            out_weight: uniform(&mut rng, h, v, bh),
            out_bias: Tensor::zeros(1, v),
            config,
            vocab,
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.context_weight, &self.context_bias, &self.token_embed, &self.out_weight, &self.out_bias]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.context_weight,
            &mut self.context_bias,
            &mut self.token_embed,
            &mut self.out_weight,
            &mut self.out_bias,
        ]
    }

    pub fn with_tensors(&self, tensors: &[Tensor]) -> Self {
        let mut out = self.clone();
        for (dst, src) in out.tensors_mut().into_iter().zip(tensors) {
            *dst = src.clone();
        }
        out
    }

    pub fn validate(&self) -> Result<(), GeneratorError> {
        let (c, h, v) = (self.config.context_dim, self.config.hidden, self.vocab.len());
        let shapes = [(c, h), (1, h), (v, h), (h, v), (1, v)];
        for (t, s) in self.tensors().into_iter().zip(shapes) {
            if t.shape() != s {
                return Err(GeneratorError::Checkpoint(format!("tensor {:?} where {s:?} expected", t.shape())));
            }
            if !t.is_finite() {
                return Err(GeneratorError::Checkpoint("non-finite weight".into()));
            }
        }
        if self.config.max_len < 1 || self.config.tweets_per_response < 1 {
            return Err(GeneratorError::Checkpoint("empty response shape".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, GeneratorError> {
        serde_json::to_string(self).map_err(|e| GeneratorError::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, GeneratorError> {
        let p: Self = serde_json::from_str(text).map_err(|e| GeneratorError::Checkpoint(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    fn check_context(&self, context: &[f64]) -> Result<(), GeneratorError> {
        if context.len() != self.config.context_dim {
            return Err(GeneratorError::ContextDim {
                expected: self.config.context_dim,
                found: context.len(),
            });
        }
        Ok(())
    }

    fn context_state(&self, context: &[f64]) -> Vec<f64> {
        let h = self.config.hidden;
        let mut out = self.context_bias.data().to_vec();
        for (x, wrow) in context.iter().zip(self.context_weight.data().chunks_exact(h)) {
            for (o, w) in out.iter_mut().zip(wrow) {
                *o += x * w;
            }
        }
        out.iter_mut().for_each(|v| *v = v.tanh());
        out
    }

    /// Log-distribution over the next token.
    fn next_log_probs(&self, state: &[f64], prev: u32) -> Vec<f64> {
        let v = self.vocab.len();
        let z: Vec<f64> = state
            .iter()
            .zip(self.token_embed.row(prev as usize))
            .map(|(a, b)| (a + b).tanh())
            .collect();
        let mut logits = self.out_bias.data().to_vec();
        for (zi, wrow) in z.iter().zip(self.out_weight.data().chunks_exact(v)) {
            for (l, w) in logits.iter_mut().zip(wrow) {
                *l += zi * w;
            }
        }
        log_softmax_in_place(&mut logits);
        logits
    }

    /// Exact log-probability of `response` given `context`.
    pub fn log_prob(&self, context: &[f64], response: &Response) -> Result<f64, GeneratorError> {
        self.check_context(context)?;
        let state = self.context_state(context);
        let mut total = 0.0;
        for tweet in response {
            let mut prev = BOS;
            for &tok in tweet {
                if tok as usize >= self.vocab.len() {
                    return Err(GeneratorError::InvalidArgument(format!("token {tok} outside the vocabulary")));
                }
                total += self.next_log_probs(&state, prev)[tok as usize];
                prev = tok;
            }
        }
        Ok(total)
    }

    /// `count` responses by temperature / top-k ancestral sampling (or greedy
    /// decoding when `params.sample` is false). `<bos>` and `<unk>` are never
    /// emitted.
    pub fn sample(
        &self,
        context: &[f64],
        params: &GenerationParams,
        count: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<Candidate>, GeneratorError> {
        self.check_context(context)?;
        params.validate()?;
        let state = self.context_state(context);
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut response = Vec::with_capacity(self.config.tweets_per_response);
            let mut log_prob = 0.0;
            for _ in 0..self.config.tweets_per_response {
                let mut tweet = Vec::new();
                let mut prev = BOS;
                while tweet.len() < self.config.max_len {
                    let lp = self.next_log_probs(&state, prev);
                    let tok = if params.sample {
                        draw(&lp, params, rng)
                    } else {
                        argmax(&lp)
                    };
                    log_prob += lp[tok as usize];
                    tweet.push(tok);
                    if tok == EOT {
                        break;
                    }
                    prev = tok;
                }
                response.push(tweet);
            }
            out.push(Candidate { response, log_prob });
        }
        Ok(out)
    }

    pub fn decode(&self, response: &Response) -> Vec<String> {
        response.iter().map(|t| self.vocab.decode(t)).collect()
    }
}

fn allowed(tok: usize) -> bool {
    tok != BOS as usize && tok != UNK as usize
}

fn argmax(lp: &[f64]) -> u32 {
    let mut best = EOT as usize;
    for (i, v) in lp.iter().enumerate() {
        if allowed(i) && *v > lp[best] {
            best = i;
        }
    }
    best as u32
}

fn draw(lp: &[f64], params: &GenerationParams, rng: &mut impl Rng) -> u32 {
    let mut order: Vec<usize> = (0..lp.len()).filter(|&i| allowed(i)).collect();
    order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
    if params.top_k > 0 {
        order.truncate(params.top_k);
    }
    let top = lp[order[0]];
    let weights: Vec<f64> = order.iter().map(|&i| ((lp[i] - top) / params.temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (&i, w) in order.iter().zip(&weights) {
        if u < *w {
            return i as u32;
        }
        u -= w;
    }
    *order.last().expect("non-empty") as u32
}

/// Flattened token positions of several (context, response) sequences for
/// the recorded route.
pub struct SequenceBatch {
    contexts: Tensor,
    owner: Rc<Vec<usize>>,
    prev: Rc<Vec<usize>>,
    target: Rc<Vec<usize>>,
    /// `sequences x positions` indicator summing positions per sequence.
    segments: Rc<SparseMatrix>,
    positions: usize,
}

impl SequenceBatch {
    pub fn new(contexts: &[&[f64]], responses: &[&Response]) -> Result<Self, GeneratorError> {
        if contexts.len() != responses.len() || contexts.is_empty() {
            return Err(GeneratorError::InvalidArgument("need one context per response".into()));
        }
        let rows: Vec<Vec<f64>> = contexts.iter().map(|c| c.to_vec()).collect();
        let contexts = Tensor::from_rows(&rows)?;
        let (mut owner, mut prev, mut target, mut trip) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (s, resp) in responses.iter().enumerate() {
            for tweet in resp.iter() {
                let mut p = BOS;
                for &t in tweet {
                    trip.push((s, owner.len(), 1.0));
                    owner.push(s);
                    prev.push(p as usize);
                    target.push(t as usize);
                    p = t;
                }
            }
        }
        let positions = owner.len();
        if positions == 0 {
            return Err(GeneratorError::InvalidArgument("responses contain no tokens".into()));
        }
        let segments = SparseMatrix::from_triplets(responses.len(), positions, &trip)?;
        Ok(Self {
            contexts,
            owner: Rc::new(owner),
            prev: Rc::new(prev),
            target: Rc::new(target),
            segments: Rc::new(segments),
            positions,
        })
    }

    pub fn positions(&self) -> usize {
        self.positions
    }
}

/// Handles for the five policy tensors on a recording graph.
pub struct PolicyVars(pub [Var; 5]);

impl PolicyVars {
    pub fn params(g: &mut Graph, policy: &PolicyModel) -> Result<Self, DiffError> {
        Self::record(g, policy, true)
    }

    pub fn constants(g: &mut Graph, policy: &PolicyModel) -> Result<Self, DiffError> {
        Self::record(g, policy, false)
    }

    fn record(g: &mut Graph, policy: &PolicyModel, trainable: bool) -> Result<Self, DiffError> {
        let mut vars = Vec::with_capacity(5);
        for t in policy.tensors() {
            vars.push(if trainable { g.param(t.clone())? } else { g.constant(t.clone())? });
        }
        Ok(Self(vars.try_into().expect("five tensors")))
    }
}

/// Per-position token log-probabilities (`positions x 1`) and their
/// per-sequence sums (`sequences x 1`).
pub fn tape_log_probs(g: &mut Graph, vars: &PolicyVars, batch: &SequenceBatch) -> Result<(Var, Var), DiffError> {
    let [wc, bc, emb, wo, bo] = vars.0;
    let x = g.constant(batch.contexts.clone())?;
    let h = g.matmul(x, wc)?;
    let h = g.add_row(h, bc)?;
    let h = g.tanh(h)?;
    let hp = g.gather_rows(h, &batch.owner)?;
    let ep = g.gather_rows(emb, &batch.prev)?;
    let z = g.add(hp, ep)?;
    let z = g.tanh(z)?;
    let logits = g.matmul(z, wo)?;
    let logits = g.add_row(logits, bo)?;
    let lp = g.log_softmax(logits)?;
    let picked = g.pick(lp, &batch.target)?;
    let per_seq = g.sparse_matmul(&batch.segments, picked)?;
    Ok((picked, per_seq))
}

/// Sequence log-probabilities through the recorded route; an independent
/// check on [`PolicyModel::log_prob`].
pub fn batch_log_probs(policy: &PolicyModel, batch: &SequenceBatch) -> Result<Vec<f64>, GeneratorError> {
    let mut g = Graph::new();
    let vars = PolicyVars::constants(&mut g, policy)?;
    let (_, per_seq) = tape_log_probs(&mut g, &vars, batch)?;
    Ok(g.value(per_seq).data().to_vec())
}
