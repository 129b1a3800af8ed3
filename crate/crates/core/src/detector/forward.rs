//! Two evaluation routes for the same network: plain-array inference with
//! cached activations (used for scoring and evaluation) and a recorded
//! forward pass on a [`Graph`] (used for training).

use std::rc::Rc;

use super::model::{RgcnClassifier, HUMAN_CLASS};
use super::DetectorError;
use crate::corpus::Dataset;
use crate::diffmath::{DiffError, Graph, SparseMatrix, Tensor, Var};
use crate::textfeat::FeatureMatrix;

/// Typed message-passing structure: `sources[r][v]` lists the users whose
/// state flows into `v` along relation `r` (for a follow edge `u -> v`, `u`
/// is a source of `v`), and `adjacency[r]` averages over them.
#[derive(Clone, Debug, PartialEq)]
pub struct RelGraph {
    n: usize,
    sources: Vec<Vec<Vec<usize>>>,
    adjacency: Vec<SparseMatrix>,
}

impl RelGraph {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        Self::from_edges(dataset.len(), &dataset.indexed_edges().into_iter().map(|(s, d, r)| (s, d, r.index())).collect::<Vec<_>>())
    }

    /// Edges as `(src, dst, relation index)`.
    pub fn from_edges(n: usize, edges: &[(usize, usize, usize)]) -> Self {
        let relations = super::model::RELATIONS;
        let mut sources = vec![vec![Vec::new(); n]; relations];
        for &(s, d, r) in edges {
            if s != d {
                sources[r][d].push(s);
            }
        }
        for per_rel in sources.iter_mut() {
            for list in per_rel.iter_mut() {
                list.sort_unstable();
                list.dedup();
            }
        }
        let adjacency = sources
            .iter()
            .map(|per_rel| {
                let mut trip = Vec::new();
                for (v, list) in per_rel.iter().enumerate() {
                    let w = 1.0 / list.len().max(1) as f64;
                    trip.extend(list.iter().map(|&u| (v, u, w)));
                }
                SparseMatrix::from_triplets(n, n, &trip).expect("indices below n")
            })
            .collect();
        Self { n, sources, adjacency }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn sources(&self, relation: usize, v: usize) -> &[usize] {
        &self.sources[relation][v]
    }

    pub fn adjacency(&self, relation: usize) -> &SparseMatrix {
        &self.adjacency[relation]
    }

    pub fn relations(&self) -> usize {
        self.sources.len()
    }

    /// Whether `u` sends a message to `v` along any relation.
    pub fn feeds(&self, u: usize, v: usize) -> bool {
        self.sources.iter().any(|per_rel| per_rel[v].binary_search(&u).is_ok())
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// `x (1 x k) * w (k x n)` accumulated into `out`.
fn vecmat_into(x: &[f64], w: &Tensor, out: &mut [f64]) {
    for (xi, wrow) in x.iter().zip(w.data().chunks_exact(w.cols())) {
        if *xi != 0.0 {
            for (o, wv) in out.iter_mut().zip(wrow) {
                *o += xi * wv;
            }
        }
    }
}

fn add_bias_and_activate(t: &mut Tensor, bias: &Tensor, slope: Option<f64>) {
    for r in 0..t.rows() {
        for (v, b) in t.row_mut(r).iter_mut().zip(bias.data()) {
            *v += b;
            if let Some(s) = slope {
                *v = leaky(*v, s);
            }
        }
    }
}

fn check_inputs(model: &RgcnClassifier, features: &FeatureMatrix, graph: &RelGraph) -> Result<(), DetectorError> {
    if features.dims() != model.arch.input_dims {
        return Err(DetectorError::DimMismatch {
            expected: model.arch.input_dims,
            found: features.dims(),
        });
    }
    if features.len() != graph.len() {
        return Err(DetectorError::MissingFeatures {
            nodes: graph.len(),
            rows: features.len(),
        });
    }
    Ok(())
}

/// Cached per-layer states of one classifier on one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct Activations {
    /// Fused input representation.
    pub h0: Tensor,
    /// Output of the first relational layer.
    pub h1: Tensor,
    /// Two-class probabilities `[bot, human]` per user.
    pub probs: Vec<[f64; 2]>,
}

impl Activations {
    pub fn human(&self) -> Vec<f64> {
        self.probs.iter().map(|p| p[HUMAN_CLASS]).collect()
    }
}

fn encode_all(model: &RgcnClassifier, f: &FeatureMatrix) -> Result<Tensor, DetectorError> {
    let slope = model.arch.leaky_slope;
    let parts = [&f.desc, &f.tweet, &f.numeric, &f.categorical];
    let h = model.arch.hidden;
    let n = f.len();
    let mut cat = Tensor::zeros(n, 4 * h);
    for (k, (x, lin)) in parts.iter().zip(&model.inputs).enumerate() {
        let mut y = x.matmul(&lin.weight)?;
        add_bias_and_activate(&mut y, &lin.bias, Some(slope));
        for r in 0..n {
            cat.row_mut(r)[k * h..(k + 1) * h].copy_from_slice(y.row(r));
        }
    }
    let mut h0 = cat.matmul(&model.fusion.weight)?;
    add_bias_and_activate(&mut h0, &model.fusion.bias, Some(slope));
    Ok(h0)
}

fn encode_row(model: &RgcnClassifier, rows: [&[f64]; 4]) -> Vec<f64> {
    let slope = model.arch.leaky_slope;
    let h = model.arch.hidden;
    let mut cat = vec![0.0; 4 * h];
    for (k, (x, lin)) in rows.iter().zip(&model.inputs).enumerate() {
        let seg = &mut cat[k * h..(k + 1) * h];
        vecmat_into(x, &lin.weight, seg);
        for (v, b) in seg.iter_mut().zip(lin.bias.data()) {
            *v = leaky(*v + b, slope);
        }
    }
    let mut out = vec![0.0; h];
    vecmat_into(&cat, &model.fusion.weight, &mut out);
    for (v, b) in out.iter_mut().zip(model.fusion.bias.data()) {
        *v = leaky(*v + b, slope);
    }
    out
}

fn rel_layer_all(model: &RgcnClassifier, layer: usize, x: &Tensor, graph: &RelGraph) -> Result<Tensor, DetectorError> {
    let l = &model.layers[layer];
    let mut out = x.matmul(&l.self_loop)?;
    for (r, w) in l.relation.iter().enumerate() {
        let agg = graph.adjacency(r).matmul(x)?;
        let msg = agg.matmul(w)?;
        for (o, m) in out.data_mut().iter_mut().zip(msg.data()) {
            *o += m;
        }
    }
    add_bias_and_activate(&mut out, &l.bias, Some(model.arch.leaky_slope));
    Ok(out)
}

/// One row of a relational layer with inputs read through `row`.
fn rel_layer_row<'a>(model: &RgcnClassifier, layer: usize, v: usize, graph: &RelGraph, row: impl Fn(usize) -> &'a [f64]) -> Vec<f64> {
    let l = &model.layers[layer];
    let h = model.arch.hidden;
    let mut out = vec![0.0; h];
    vecmat_into(row(v), &l.self_loop, &mut out);
    for (r, w) in l.relation.iter().enumerate() {
        let src = graph.sources(r, v);
        if src.is_empty() {
            continue;
        }
        let scale = 1.0 / src.len() as f64;
        let mut agg = vec![0.0; h];
        for &u in src {
            for (a, x) in agg.iter_mut().zip(row(u)) {
                *a += scale * x;
            }
        }
        vecmat_into(&agg, w, &mut out);
    }
    for (o, b) in out.iter_mut().zip(l.bias.data()) {
        *o = leaky(*o + b, model.arch.leaky_slope);
    }
    out
}

fn softmax2(l: [f64; 2]) -> [f64; 2] {
    let m = l[0].max(l[1]);
    let e = [(l[0] - m).exp(), (l[1] - m).exp()];
    let s = e[0] + e[1];
    [e[0] / s, e[1] / s]
}

fn head_row(model: &RgcnClassifier, h2: &[f64]) -> [f64; 2] {
    let h = model.arch.hidden;
    let mut z = vec![0.0; h];
    vecmat_into(h2, &model.head.weight, &mut z);
    for (v, b) in z.iter_mut().zip(model.head.bias.data()) {
        *v = leaky(*v + b, model.arch.leaky_slope);
    }
    let mut logits = [0.0; 2];
    vecmat_into(&z, &model.out.weight, &mut logits);
    softmax2([logits[0] + model.out.bias.data()[0], logits[1] + model.out.bias.data()[1]])
}

/// Full inference pass (no dropout) keeping intermediate states.
pub fn forward_full(model: &RgcnClassifier, features: &FeatureMatrix, graph: &RelGraph) -> Result<Activations, DetectorError> {
    check_inputs(model, features, graph)?;
    let h0 = encode_all(model, features)?;
    let h1 = rel_layer_all(model, 0, &h0, graph)?;
    let h2 = rel_layer_all(model, 1, &h1, graph)?;
    let mut z = h2.matmul(&model.head.weight)?;
    add_bias_and_activate(&mut z, &model.head.bias, Some(model.arch.leaky_slope));
    let mut logits = z.matmul(&model.out.weight)?;
    add_bias_and_activate(&mut logits, &model.out.bias, None);
    let probs = (0..logits.rows())
        .map(|r| softmax2([logits.get(r, 0), logits.get(r, 1)]))
        .collect();
    Ok(Activations { h0, h1, probs })
}

/// Per-user probability of the human class.
pub fn forward(model: &RgcnClassifier, features: &FeatureMatrix, graph: &RelGraph) -> Result<Vec<f64>, DetectorError> {
    Ok(forward_full(model, features, graph)?.human())
}

/// Human probability of `target` after replacing its tweet-embedding row,
/// recomputing only the states that depend on it.
pub fn rescore_target(
    model: &RgcnClassifier,
    cache: &Activations,
    features: &FeatureMatrix,
    graph: &RelGraph,
    target: usize,
    tweet_embed: &[f64],
) -> f64 {
    let h0_t = encode_row(
        model,
        [features.desc.row(target), tweet_embed, features.numeric.row(target), features.categorical.row(target)],
    );
    let h0_row = |u: usize| if u == target { h0_t.as_slice() } else { cache.h0.row(u) };
    // layer-1 states needed for the target's second layer
    let mut needed: Vec<usize> = vec![target];
    for r in 0..graph.relations() {
        needed.extend_from_slice(graph.sources(r, target));
    }
    needed.sort_unstable();
    needed.dedup();
    let mut fresh: Vec<(usize, Vec<f64>)> = Vec::new();
    for &w in &needed {
        if w == target || graph.feeds(target, w) {
            fresh.push((w, rel_layer_row(model, 0, w, graph, h0_row)));
        }
    }
    let h1_row = |u: usize| -> &[f64] {
        match fresh.iter().find(|(w, _)| *w == u) {
            Some((_, v)) => v.as_slice(),
            None => cache.h1.row(u),
        }
    };
    let h2_t = rel_layer_row(model, 1, target, graph, h1_row);
    head_row(model, &h2_t)[HUMAN_CLASS]
}

/// Parameter handles on a recording graph, in [`RgcnClassifier::tensors`] order.
pub struct TapeParams {
    pub vars: Vec<Var>,
}

impl TapeParams {
    pub fn record(g: &mut Graph, model: &RgcnClassifier) -> Result<Self, DiffError> {
        let vars = model.tensors().into_iter().map(|t| g.param(t.clone())).collect::<Result<_, _>>()?;
        Ok(Self { vars })
    }
}

/// Dropout keep-masks for the two dropout sites; `None` disables dropout.
pub struct DropoutMasks {
    pub fused: Tensor,
    pub layer1: Tensor,
}

/// Recorded forward pass returning the `n x 2` logits.
pub fn tape_logits(
    g: &mut Graph,
    model: &RgcnClassifier,
    params: &TapeParams,
    features: &FeatureMatrix,
    adjacency: &[Rc<SparseMatrix>],
    masks: Option<&DropoutMasks>,
) -> Result<Var, DetectorError> {
    let slope = model.arch.leaky_slope;
    let p = &params.vars;
    let mut next = p.iter().copied();
    let mut take = || next.next().expect("parameter order matches the model");
    let mut encoded = Vec::with_capacity(4);
    for x in [&features.desc, &features.tweet, &features.numeric, &features.categorical] {
        let (w, b) = (take(), take());
        let xin = g.constant(x.clone())?;
        let y = g.matmul(xin, w)?;
        let y = g.add_row(y, b)?;
        encoded.push(g.leaky_relu(y, slope)?);
    }
    let (fw, fb) = (take(), take());
    let cat = g.concat_cols(&encoded)?;
    let h = g.matmul(cat, fw)?;
    let h = g.add_row(h, fb)?;
    let mut h = g.leaky_relu(h, slope)?;
    if let Some(m) = masks {
        h = g.dropout(h, &m.fused, model.arch.dropout)?;
    }
    for layer in 0..2 {
        let ws = take();
        let rel: Vec<Var> = (0..model.arch.relations).map(|_| take()).collect();
        let b = take();
        let mut acc = g.matmul(h, ws)?;
        for (r, w) in rel.into_iter().enumerate() {
            let agg = g.sparse_matmul(&adjacency[r], h)?;
            let msg = g.matmul(agg, w)?;
            acc = g.add(acc, msg)?;
        }
        let acc = g.add_row(acc, b)?;
        h = g.leaky_relu(acc, slope)?;
        if layer == 0 {
            if let Some(m) = masks {
                h = g.dropout(h, &m.layer1, model.arch.dropout)?;
            }
        }
    }
    let (hw, hb) = (take(), take());
    let z = g.matmul(h, hw)?;
    let z = g.add_row(z, hb)?;
    let z = g.leaky_relu(z, slope)?;
    let (ow, ob) = (take(), take());
    let logits = g.matmul(z, ow)?;
    Ok(g.add_row(logits, ob)?)
}

/// Mean cross-entropy over `rows` with targets `classes`.
pub fn tape_cross_entropy(g: &mut Graph, logits: Var, rows: &Rc<Vec<usize>>, classes: &Rc<Vec<usize>>) -> Result<Var, DetectorError> {
    let sel = g.gather_rows(logits, rows)?;
    let logp = g.log_softmax(sel)?;
    let picked = g.pick(logp, classes)?;
    let mean = g.mean(picked)?;
    Ok(g.scale(mean, -1.0)?)
}
