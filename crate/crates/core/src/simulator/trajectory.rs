use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SimError;

/// Opinions of every agent at every step; row `t` is the snapshot after
/// step `t` (row 0 is the initial state).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpinionTrajectory {
    pub opinions: Vec<Vec<f64>>,
}

/// Per-step mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

impl OpinionTrajectory {
    pub fn steps(&self) -> usize {
        self.opinions.len()
    }

    pub fn summary(&self) -> TrajectorySummary {
        let (mean, std) = self.opinions.iter().map(|o| mean_std(o)).unzip();
        TrajectorySummary { mean, std }
    }

    /// Drops the initial snapshot, leaving one row per simulated step.
    pub fn without_initial(&self) -> Self {
        Self {
            opinions: self.opinions.iter().skip(1).cloned().collect(),
        }
    }

    /// `step,user,opinion`.
    pub fn to_csv(&self, user_ids: &[String]) -> String {
        let mut s = String::from("step,user,opinion\n");
        for (t, row) in self.opinions.iter().enumerate() {
            for (i, o) in row.iter().enumerate() {
                let _ = writeln!(s, "{t},{},{o}", user_ids[i]);
            }
        }
        s
    }
}

impl TrajectorySummary {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// `step,mean,std`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,mean,std\n");
        for (t, (m, d)) in self.mean.iter().zip(&self.std).enumerate() {
            let _ = writeln!(s, "{t},{m},{d}");
        }
        s
    }

    /// Reads `step,mean,std` rows; steps must run 0, 1, 2, ...
    pub fn from_csv(text: &str, path: &str) -> Result<Self, SimError> {
        #[derive(Deserialize)]
        struct Row {
            step: usize,
            mean: f64,
            std: f64,
        }
        let mut out = TrajectorySummary { mean: Vec::new(), std: Vec::new() };
        for (i, row) in csv::Reader::from_reader(text.as_bytes()).deserialize::<Row>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| SimError::Parse {
                path: path.to_string(),
                line,
                message: e.to_string(),
            })?;
            if row.step != i || !row.mean.is_finite() || !(row.std >= 0.0) {
                return Err(SimError::Parse {
                    path: path.to_string(),
                    line,
                    message: format!("expected step {i} with finite mean and std >= 0"),
                });
            }
            out.mean.push(row.mean);
            out.std.push(row.std);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_csv(&text, &path.display().to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpinionMetrics {
    pub mean: f64,
    pub std: f64,
    pub delta_bias: f64,
    pub delta_div: f64,
}

/// Time-averaged mean and spread of `sim`, and its time-averaged absolute
/// gaps to `real` in mean (bias) and spread (diversity).
pub fn opinion_metrics(sim: &TrajectorySummary, real: &TrajectorySummary) -> Result<OpinionMetrics, SimError> {
    if sim.len() != real.len() || sim.is_empty() {
        return Err(SimError::HorizonMismatch {
            sim: sim.len(),
            real: real.len(),
        });
    }
    let t = sim.len() as f64;
    let avg = |v: &[f64]| v.iter().sum::<f64>() / t;
    let gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / t;
    Ok(OpinionMetrics {
        mean: avg(&sim.mean),
        std: avg(&sim.std),
        delta_bias: gap(&sim.mean, &real.mean),
        delta_div: gap(&sim.std, &real.std),
    })
}
