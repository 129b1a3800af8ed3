use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{forward, tape_cross_entropy, tape_logits, DropoutMasks, RelGraph, TapeParams};
use super::model::{Architecture, RgcnClassifier, HUMAN_CLASS};
use super::DetectorError;
use crate::corpus::Label;
use crate::diffmath::{AdamConfig, AdamState, Graph, SparseMatrix, Tensor};
use crate::metrics::{classification_metrics, F1Side};
use crate::textfeat::FeatureMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Class side whose validation F1 picks the returned epoch.
    pub select_side: F1Side,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            epochs: 120,
            adam: AdamConfig {
                lr: 1e-3,
                weight_decay: 0.1,
                ..AdamConfig::default()
            },
            select_side: F1Side::Human,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Zero-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub train_loss: Vec<f64>,
    pub val_f1: Vec<f64>,
}

/// Output column index per label.
pub fn class_targets(labels: &[Label], rows: &[usize]) -> Vec<usize> {
    rows.iter()
        .map(|&i| if labels[i].is_human() { HUMAN_CLASS } else { 1 - HUMAN_CLASS })
        .collect()
}

/// Keep-masks for both dropout sites, drawn from `rng`.
pub fn dropout_masks<R: Rng>(rng: &mut R, n: usize, hidden: usize, p: f64) -> DropoutMasks {
    let mut draw = || {
        let data = (0..n * hidden).map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 }).collect();
        Tensor::from_vec(n, hidden, data).expect("sized")
    };
    let fused = draw();
    let layer1 = draw();
    DropoutMasks { fused, layer1 }
}

fn shared_adjacency(graph: &RelGraph) -> Vec<Rc<SparseMatrix>> {
    (0..graph.relations()).map(|r| Rc::new(graph.adjacency(r).clone())).collect()
}

/// Mean cross-entropy on `rows` and its gradient for every parameter tensor.
pub fn training_loss(
    model: &RgcnClassifier,
    features: &FeatureMatrix,
    graph: &RelGraph,
    labels: &[Label],
    rows: &[usize],
    masks: Option<&DropoutMasks>,
) -> Result<(f64, Vec<Tensor>), DetectorError> {
    let adjacency = shared_adjacency(graph);
    loss_and_grads(model, features, &adjacency, &Rc::new(rows.to_vec()), &Rc::new(class_targets(labels, rows)), masks)
}

fn loss_and_grads(
    model: &RgcnClassifier,
    features: &FeatureMatrix,
    adjacency: &[Rc<SparseMatrix>],
    rows: &Rc<Vec<usize>>,
    targets: &Rc<Vec<usize>>,
    masks: Option<&DropoutMasks>,
) -> Result<(f64, Vec<Tensor>), DetectorError> {
    let mut g = Graph::new();
    let params = TapeParams::record(&mut g, model)?;
    let logits = tape_logits(&mut g, model, &params, features, adjacency, masks)?;
    let loss = tape_cross_entropy(&mut g, logits, rows, targets)?;
    let value = g.value(loss).item()?;
    let grads = g.backward(loss)?;
    let out = params
        .vars
        .iter()
        .zip(model.tensors())
        .map(|(v, t)| grads.get_or_zeros(*v, t.shape()))
        .collect();
    Ok((value, out))
}

/// Full-batch training; returns the weights from the epoch with the best
/// validation F1 (earliest on ties).
pub fn train_classifier(
    features: &FeatureMatrix,
    graph: &RelGraph,
    labels: &[Label],
    train: &[usize],
    val: &[usize],
    config: &TrainConfig,
    seed: u64,
) -> Result<(RgcnClassifier, TrainReport), DetectorError> {
    if labels.len() != features.len() {
        return Err(DetectorError::MissingFeatures {
            nodes: labels.len(),
            rows: features.len(),
        });
    }
    let humans = train.iter().filter(|&&i| labels[i].is_human()).count();
    if humans == 0 || humans == train.len() {
        return Err(DetectorError::SingleClass);
    }
    if config.epochs == 0 || config.hidden == 0 {
        return Err(DetectorError::InvalidArgument("epochs and hidden size must be positive".into()));
    }
    if val.is_empty() {
        return Err(DetectorError::InvalidArgument("validation set is empty".into()));
    }
    let arch = Architecture::new(features.dims(), config.hidden);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = RgcnClassifier::init(arch, rng.random());
    let adjacency = shared_adjacency(graph);
    let rows = Rc::new(train.to_vec());
    let targets = Rc::new(class_targets(labels, train));
    let val_labels: Vec<Label> = val.iter().map(|&i| labels[i]).collect();
    let mut adam = AdamState::new(config.adam.clone(), &model.tensors());
    let mut best = (model.clone(), f64::NEG_INFINITY, 0);
    let mut report = TrainReport {
        best_epoch: 0,
        best_val_f1: 0.0,
        train_loss: Vec::with_capacity(config.epochs),
        val_f1: Vec::with_capacity(config.epochs),
    };
    for epoch in 0..config.epochs {
        let masks = dropout_masks(&mut rng, features.len(), config.hidden, model.arch.dropout);
        let (loss, grads) = loss_and_grads(&model, features, &adjacency, &rows, &targets, Some(&masks))?;
        adam.step(&mut model.tensors_mut(), &grads)?;
        let probs = forward(&model, features, graph)?;
        let val_probs: Vec<f64> = val.iter().map(|&i| probs[i]).collect();
        let f1 = classification_metrics(&val_probs, &val_labels, 0.5)?.f1(config.select_side);
        report.train_loss.push(loss);
        report.val_f1.push(f1);
        if f1 > best.1 {
            best = (model.clone(), f1, epoch);
        }
    }
    let (model, f1, epoch) = best;
    report.best_epoch = epoch;
    report.best_val_f1 = f1;
    Ok((model, report))
}
