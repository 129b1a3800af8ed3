//! Agent-based opinion baselines. Each step every agent samples one of its
//! followees and updates from the previous snapshot; agents without
//! followees keep their opinion. Opinions are clamped to [-1, 1].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::OpinionTrajectory;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BcParams {
    pub mu: f64,
    pub epsilon: f64,
}

impl Default for BcParams {
    fn default() -> Self {
        Self { mu: 0.8, epsilon: 0.3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LorenzParams {
    pub alpha: f64,
    pub lambda: f64,
    pub k: f64,
    pub theta: f64,
    /// Opinion bound in the polarization factor.
    pub m: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            lambda: 2.0,
            k: 2.0,
            theta: 0.5,
            m: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum AbmModel {
    Bc(BcParams),
    Lorenz(LorenzParams),
}

/// Moves `x_i` a fraction `mu` toward `x_j` when they are within `epsilon`.
pub fn bc_update(x_i: f64, x_j: f64, p: &BcParams) -> f64 {
    if (x_i - x_j).abs() <= p.epsilon {
        x_i + p.mu * (x_j - x_i)
    } else {
        x_i
    }
}

/// `alpha * pol(a) * sim(a, m) * (theta (m - a) + (1 - theta) m)` with
/// `pol = (M^2 - a^2) / M^2` and `sim = lambda^k / (lambda^k + |m - a|^k)`.
pub fn lorenz_delta(a: f64, message: f64, p: &LorenzParams) -> f64 {
    let pol = (p.m * p.m - a * a) / (p.m * p.m);
    let lk = p.lambda.powf(p.k);
    let sim = lk / (lk + (message - a).abs().powf(p.k));
    p.alpha * pol * sim * (p.theta * (message - a) + (1.0 - p.theta) * message)
}

fn step_with(states: &[f64], followees: &[Vec<usize>], rng: &mut impl Rng, update: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    states
        .iter()
        .zip(followees)
        .map(|(&x, fs)| {
            if fs.is_empty() {
                x
            } else {
                let j = fs[rng.random_range(0..fs.len())];
                update(x, states[j]).clamp(-1.0, 1.0)
            }
        })
        .collect()
}

pub fn step_bc(states: &[f64], followees: &[Vec<usize>], p: &BcParams, rng: &mut impl Rng) -> Vec<f64> {
    step_with(states, followees, rng, |x, y| bc_update(x, y, p))
}

pub fn step_lorenz(states: &[f64], followees: &[Vec<usize>], p: &LorenzParams, rng: &mut impl Rng) -> Vec<f64> {
    step_with(states, followees, rng, |a, m| a + lorenz_delta(a, m, p))
}

/// `steps` synchronous updates from `initial`; the trajectory has
/// `steps + 1` rows.
pub fn run_abm(initial: &[f64], followees: &[Vec<usize>], model: &AbmModel, steps: usize, seed: u64) -> OpinionTrajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut opinions = Vec::with_capacity(steps + 1);
    let mut cur: Vec<f64> = initial.iter().map(|x| x.clamp(-1.0, 1.0)).collect();
    opinions.push(cur.clone());
    for _ in 0..steps {
        cur = match model {
            AbmModel::Bc(p) => step_bc(&cur, followees, p, &mut rng),
            AbmModel::Lorenz(p) => step_lorenz(&cur, followees, p, &mut rng),
        };
        opinions.push(cur.clone());
    }
    OpinionTrajectory { opinions }
}

/// Number of maximal groups whose sorted neighbours lie within `epsilon`.
pub fn opinion_clusters(opinions: &[f64], epsilon: f64) -> usize {
    if opinions.is_empty() {
        return 0;
    }
    let mut v = opinions.to_vec();
    v.sort_by(f64::total_cmp);
    1 + v.windows(2).filter(|w| w[1] - w[0] > epsilon).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_updates() {
        let bc = BcParams::default();
        assert_eq!(bc_update(0.2, 0.9, &bc), 0.2);
        assert!((bc_update(0.2, 0.4, &bc) - 0.36).abs() < 1e-12);
        let lz = LorenzParams::default();
        assert!((lorenz_delta(0.0, 0.5, &lz) - 0.1 * (4.0 / 4.25) * 0.5).abs() < 1e-15);
        assert_eq!(lorenz_delta(1.0, -0.3, &lz), 0.0);
    }

    #[test]
    fn clusters_split_on_gaps() {
        assert_eq!(opinion_clusters(&[0.0, 0.01, 0.5, 0.52, -0.9], 0.05), 3);
        assert_eq!(opinion_clusters(&[], 0.1), 0);
    }
}
