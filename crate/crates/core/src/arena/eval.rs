use std::fmt::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rounds::{Arena, RoundArtifacts, EVAL, SPLIT};
use super::{ArenaConfig, ArenaError};
use crate::corpus::{dataset_digest, split_dataset, Dataset, Label, Split};
use crate::detector::{forward, EnsembleDetector, RelGraph};
use crate::metrics::{classification_metrics, ClassificationReport, F1Side};
use crate::plot::heatmap_svg;
use crate::seeding::derive_seed;
use crate::textfeat::Featurizer;

/// Which users a matrix cell is scored on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalScope {
    Test,
    /// Validation and test users.
    Holdout,
    All,
}

impl std::str::FromStr for EvalScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "test" => Ok(EvalScope::Test),
            "holdout" => Ok(EvalScope::Holdout),
            "all" => Ok(EvalScope::All),
            other => Err(format!("unknown evaluation scope {other:?}")),
        }
    }
}

impl EvalScope {
    pub fn rows(self, split: &Split, n: usize) -> Vec<usize> {
        match self {
            EvalScope::Test => split.test.clone(),
            EvalScope::Holdout => {
                let mut r: Vec<usize> = split.val.iter().chain(&split.test).copied().collect();
                r.sort_unstable();
                r
            }
            EvalScope::All => (0..n).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub scope: EvalScope,
    /// F1 side used by [`EvalMatrix::f1`] and the heatmap.
    pub side: F1Side,
    /// Rows are the bare per-round classifiers f^i instead of the ensembles
    /// F^i.
    pub bare_rows: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            scope: EvalScope::Test,
            side: F1Side::Bot,
            bare_rows: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub accuracy: f64,
    pub f1_human: f64,
    pub f1_bot: f64,
}

impl CellMetrics {
    pub fn f1(&self, side: F1Side) -> f64 {
        match side {
            F1Side::Human => self.f1_human,
            F1Side::Bot => self.f1_bot,
        }
    }
}

impl From<ClassificationReport> for CellMetrics {
    fn from(r: ClassificationReport) -> Self {
        Self {
            accuracy: r.accuracy,
            f1_human: r.f1_human,
            f1_bot: r.f1_bot,
        }
    }
}

fn score(probs: &[f64], labels: &[Label], rows: &[usize]) -> Result<CellMetrics, ArenaError> {
    let p: Vec<f64> = rows.iter().map(|&i| probs[i]).collect();
    let l: Vec<Label> = rows.iter().map(|&i| labels[i]).collect();
    Ok(classification_metrics(&p, &l, 0.5)?.into())
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

/// Detector version (row) by policy version (column).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    pub bare_rows: bool,
    pub side: F1Side,
    pub cells: Vec<Vec<CellMetrics>>,
    /// Digest of the dataset every row of column `j` was scored on.
    pub column_digests: Vec<String>,
}

impl EvalMatrix {
    pub fn f1(&self, row: usize, col: usize) -> f64 {
        self.cells[row][col].f1(self.side)
    }

    pub fn row_labels(&self) -> Vec<String> {
        let p = if self.bare_rows { "f" } else { "F" };
        (0..self.cells.len()).map(|i| format!("{p}{i}")).collect()
    }

    pub fn col_labels(&self) -> Vec<String> {
        (0..self.column_digests.len()).map(|j| format!("pi{j}")).collect()
    }

    pub fn row_means(&self) -> Vec<f64> {
        self.cells.iter().map(|r| mean(r.iter().map(|c| c.f1(self.side)))).collect()
    }

    pub fn col_means(&self) -> Vec<f64> {
        (0..self.column_digests.len())
            .map(|j| mean(self.cells.iter().map(|r| r[j].f1(self.side))))
            .collect()
    }

    /// Long format: `row,col,detector,policy,accuracy,f1_human,f1_bot`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,col,detector,policy,accuracy,f1_human,f1_bot\n");
        let (rl, cl) = (self.row_labels(), self.col_labels());
        for (i, row) in self.cells.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                let _ = writeln!(s, "{i},{j},{},{},{},{},{}", rl[i], cl[j], c.accuracy, c.f1_human, c.f1_bot);
            }
        }
        s
    }

    pub fn to_svg(&self) -> String {
        let values: Vec<Vec<f64>> = self.cells.iter().map(|r| r.iter().map(|c| c.f1(self.side)).collect()).collect();
        let side = match self.side {
            F1Side::Human => "human",
            F1Side::Bot => "bot",
        };
        heatmap_svg(&format!("{side}-side F1"), &self.row_labels(), &self.col_labels(), &values)
    }
}

/// Cell (i, j): detector version i on D^0 with every bot rewritten by pi^j.
/// Column j's rewrite uses one fixed seed, so all rows see the same data.
pub fn eval_matrix(arena: &Arena<'_>, artifacts: &RoundArtifacts) -> Result<EvalMatrix, ArenaError> {
    let cfg = &arena.config;
    let opts = &cfg.eval;
    let n = artifacts.classifiers.len();
    if artifacts.policies.len() != n {
        return Err(ArenaError::InvalidArgument(format!(
            "{} policies but {n} classifiers",
            artifacts.policies.len()
        )));
    }
    let rows = opts.scope.rows(arena.split(), arena.dataset().len());
    let columns: Vec<(String, Vec<CellMetrics>)> = artifacts
        .policies
        .par_iter()
        .enumerate()
        .map(|(j, policy)| -> Result<_, ArenaError> {
            let seed = derive_seed(cfg.seed, &[j as u64, EVAL]);
            let data = arena.replace(arena.dataset(), policy, seed)?;
            let features = arena.featurizer().featurize(&data)?;
            let member_probs = artifacts
                .classifiers
                .iter()
                .map(|m| forward(m, &features, arena.graph()))
                .collect::<Result<Vec<_>, _>>()?;
            let mut cells = Vec::with_capacity(n);
            for i in 0..n {
                let probs = if opts.bare_rows {
                    member_probs[i].clone()
                } else {
                    EnsembleDetector::new(artifacts.classifiers[..=i].to_vec(), cfg.strategy)?.combine(&member_probs[..=i])
                };
                cells.push(score(&probs, arena.labels(), &rows)?);
            }
            Ok((dataset_digest(&data)?, cells))
        })
        .collect::<Result<_, _>>()?;
    let mut cells = vec![Vec::with_capacity(n); n];
    let mut column_digests = Vec::with_capacity(n);
    for (digest, col) in columns {
        column_digests.push(digest);
        for (i, c) in col.into_iter().enumerate() {
            cells[i].push(c);
        }
    }
    Ok(EvalMatrix {
        bare_rows: opts.bare_rows,
        side: opts.side,
        cells,
        column_digests,
    })
}

/// Train-community (row) by test-community (column) F1, for the final
/// ensembles and for their round-0 classifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationMatrix {
    pub side: F1Side,
    pub final_ensemble: Vec<Vec<CellMetrics>>,
    pub base: Vec<Vec<CellMetrics>>,
}

impl GeneralizationMatrix {
    /// `detector,train,test,accuracy,f1_human,f1_bot`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("detector,train,test,accuracy,f1_human,f1_bot\n");
        for (name, m) in [("final", &self.final_ensemble), ("base", &self.base)] {
            for (i, row) in m.iter().enumerate() {
                for (j, c) in row.iter().enumerate() {
                    let _ = writeln!(s, "{name},{i},{j},{},{},{}", c.accuracy, c.f1_human, c.f1_bot);
                }
            }
        }
        s
    }

    pub fn to_svg(&self, final_ensemble: bool) -> String {
        let m = if final_ensemble { &self.final_ensemble } else { &self.base };
        let values: Vec<Vec<f64>> = m.iter().map(|r| r.iter().map(|c| c.f1(self.side)).collect()).collect();
        let labels: Vec<String> = (0..m.len()).map(|i| format!("c{i}")).collect();
        let title = if final_ensemble { "final detector F1" } else { "base detector F1" };
        heatmap_svg(title, &labels, &labels, &values)
    }
}

/// `detectors[c]` was trained on `communities[c]`. Every detector is scored
/// on every community's test split (the split `Arena` would draw with
/// `config.split` and `config.seed`), with features fitted per community.
pub fn cross_community_generalization(
    communities: &[Dataset],
    detectors: &[EnsembleDetector],
    config: &ArenaConfig,
    side: F1Side,
) -> Result<GeneralizationMatrix, ArenaError> {
    if communities.len() < 2 || detectors.len() != communities.len() {
        return Err(ArenaError::InvalidArgument(format!(
            "need one detector per community and at least two communities, got {} and {}",
            detectors.len(),
            communities.len()
        )));
    }
    let dims = detectors[0].members()[0].arch.input_dims;
    let mut prepared = Vec::with_capacity(communities.len());
    for (c, d) in communities.iter().enumerate() {
        let features = Featurizer::fit(d, config.features.clone())?.featurize(d)?;
        if features.dims() != dims || detectors[c].members()[0].arch.input_dims != dims {
            return Err(ArenaError::SchemaMismatch(format!(
                "community {c} has input widths {:?}, expected {dims:?}",
                features.dims()
            )));
        }
        let split = split_dataset(d, config.split, derive_seed(config.seed, &[0, SPLIT]))?;
        prepared.push((features, RelGraph::from_dataset(d), split.test, d.labels()));
    }
    let mut final_ensemble = Vec::with_capacity(detectors.len());
    let mut base = Vec::with_capacity(detectors.len());
    for det in detectors {
        let first = det.truncated(0)?;
        let mut fr = Vec::with_capacity(prepared.len());
        let mut br = Vec::with_capacity(prepared.len());
        for (features, graph, test, labels) in &prepared {
            fr.push(score(&det.probability(features, graph)?, labels, test)?);
            br.push(score(&first.probability(features, graph)?, labels, test)?);
        }
        final_ensemble.push(fr);
        base.push(br);
    }
    Ok(GeneralizationMatrix {
        side,
        final_ensemble,
        base,
    })
}
