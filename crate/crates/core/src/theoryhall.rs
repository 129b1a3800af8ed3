//! Tabular harness for the adversarial objectives: a finite context set `X`,
//! a finite response set `Y`, a human policy and a softmax generator, with
//! the detector objective, its closed-form maximizer, the generator objective
//! and an alternating optimizer that should settle at `pi_theta = pi_H`,
//! `F = 1/2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TheoryError {
    #[error("{0}")]
    Invalid(String),
    #[error("objective became non-finite at outer step {step}")]
    Diverged { step: usize, trajectory: Vec<TrajectoryPoint> },
}

fn check_distribution(name: &str, p: &[f64]) -> Result<(), TheoryError> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(TheoryError::Invalid(format!("{name} has a negative or non-finite entry")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(TheoryError::Invalid(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularWorld {
    /// Context distribution `q(x)` for human samples.
    pub q: Vec<f64>,
    /// Context distribution `q'(x)` for generated samples; `None` means `q`.
    pub q_gen: Option<Vec<f64>>,
    /// Row-stochastic `pi_H(y|x)`.
    pub human: Vec<Vec<f64>>,
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    // fold the rounding residue into the largest entry so the sum is tight
    let resid = 1.0 - v.iter().sum::<f64>();
    if let Some(m) = v.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *m += resid;
    }
    v
}

/// Strictly positive random distribution with moderate spread.
fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    normalized((0..n).map(|_| rng.random_range(0.05..1.0)).collect())
}

impl TabularWorld {
    pub fn new(q: Vec<f64>, q_gen: Option<Vec<f64>>, human: Vec<Vec<f64>>) -> Result<Self, TheoryError> {
        check_distribution("q", &q)?;
        if let Some(g) = &q_gen {
            check_distribution("q'", g)?;
            if g.len() != q.len() {
                return Err(TheoryError::Invalid("q and q' differ in length".into()));
            }
        }
        if human.len() != q.len() || human.is_empty() {
            return Err(TheoryError::Invalid("human policy needs one row per context".into()));
        }
        let ny = human[0].len();
        for (x, row) in human.iter().enumerate() {
            if row.len() != ny || ny == 0 {
                return Err(TheoryError::Invalid("ragged human policy".into()));
            }
            check_distribution(&format!("pi_H(.|{x})"), row)?;
        }
        Ok(Self { q, q_gen, human })
    }

    pub fn random(nx: usize, ny: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = random_distribution(&mut rng, nx);
        let human = (0..nx).map(|_| random_distribution(&mut rng, ny)).collect();
        Self { q, q_gen: None, human }
    }

    pub fn nx(&self) -> usize {
        self.q.len()
    }

    pub fn ny(&self) -> usize {
        self.human[0].len()
    }

    pub fn q_gen(&self) -> &[f64] {
        self.q_gen.as_deref().unwrap_or(&self.q)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub logits: Vec<Vec<f64>>,
}

impl TabularPolicy {
    pub fn random(nx: usize, ny: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            logits: (0..nx)
                .map(|_| (0..ny).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect(),
        }
    }

    /// Logits `ln p`, so the softmax reproduces `p` exactly up to rounding.
    pub fn from_probs(p: &[Vec<f64>]) -> Self {
        Self {
            logits: p.iter().map(|r| r.iter().map(|v| v.ln()).collect()).collect(),
        }
    }

    pub fn probs(&self) -> Vec<Vec<f64>> {
        self.logits
            .iter()
            .map(|row| {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|l| (l - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            })
            .collect()
    }
}

/// Detector values `F(x, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularDetector {
    pub values: Vec<Vec<f64>>,
}

impl TabularDetector {
    pub fn constant(nx: usize, ny: usize, v: f64) -> Self {
        Self { values: vec![vec![v; ny]; nx] }
    }

    pub fn from_logits(logits: &[Vec<f64>]) -> Self {
        Self {
            values: logits
                .iter()
                .map(|r| r.iter().map(|l| 1.0 / (1.0 + (-l).exp())).collect())
                .collect(),
        }
    }

    pub fn max_deviation_from_half(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .map(|v| (v - 0.5).abs())
            .fold(0.0, f64::max)
    }
}

/// `a * ln(b)` with the convention `0 * ln(anything) = 0`.
fn xlog(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * b.ln()
    }
}

/// Expected log-likelihood of correctly labelling human and generated samples.
pub fn detector_objective(world: &TabularWorld, policy: &[Vec<f64>], detector: &TabularDetector) -> f64 {
    let qg = world.q_gen();
    let mut total = 0.0;
    for x in 0..world.nx() {
        for y in 0..world.ny() {
            let f = detector.values[x][y];
            total += world.q[x] * xlog(world.human[x][y], f);
            total += qg[x] * xlog(policy[x][y], 1.0 - f);
        }
    }
    total
}

/// `pi_H / (pi_H + pi_theta)`, and 1/2 where both vanish.
pub fn optimal_detector(world: &TabularWorld, policy: &[Vec<f64>]) -> TabularDetector {
    TabularDetector {
        values: world
            .human
            .iter()
            .zip(policy)
            .map(|(h, p)| {
                h.iter()
                    .zip(p)
                    .map(|(&a, &b)| if a + b == 0.0 { 0.5 } else { a / (a + b) })
                    .collect()
            })
            .collect(),
    }
}

/// `KL(p || r)` in nats; infinite when `r` misses support of `p`.
pub fn kl(p: &[f64], r: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(r) {
        if a > 0.0 {
            if b == 0.0 {
                return f64::INFINITY;
            }
            total += a * (a / b).ln();
        }
    }
    total
}

/// `E_{q', pi_theta}[1 - ln F] + beta * E_q[KL(pi_H || pi_theta)]`; returns
/// `+inf` when the KL term is unbounded.
pub fn generator_objective(world: &TabularWorld, policy: &[Vec<f64>], detector: &TabularDetector, beta: f64) -> f64 {
    let qg = world.q_gen();
    let mut adv = 0.0;
    let mut div = 0.0;
    for x in 0..world.nx() {
        for y in 0..world.ny() {
            let p = policy[x][y];
            if p > 0.0 {
                adv += qg[x] * p * (1.0 - detector.values[x][y].ln());
            }
        }
        if beta != 0.0 {
            div += world.q[x] * kl(&world.human[x], &policy[x]);
        }
    }
    adv + beta * div
}

/// The two divergence terms of the generator objective at the optimal
/// detector: `E_q[KL(pi_theta || (pi_H + pi_theta)/2)]` and
/// `E_q[KL(pi_H || pi_theta)]`. Both vanish exactly when the policies agree.
pub fn optimum_divergences(world: &TabularWorld, policy: &[Vec<f64>]) -> (f64, f64) {
    let mut mix_term = 0.0;
    let mut kl_term = 0.0;
    for x in 0..world.nx() {
        let mix: Vec<f64> = world.human[x].iter().zip(&policy[x]).map(|(a, b)| (a + b) / 2.0).collect();
        mix_term += world.q[x] * kl(&policy[x], &mix);
        kl_term += world.q[x] * kl(&world.human[x], &policy[x]);
    }
    (mix_term, kl_term)
}

/// Mean over `q` of the per-context total-variation distance.
pub fn average_tv(world: &TabularWorld, policy: &[Vec<f64>]) -> f64 {
    world
        .human
        .iter()
        .zip(policy)
        .zip(&world.q)
        .map(|((h, p), qx)| qx * 0.5 * h.iter().zip(p).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .sum()
}

/// Gradient of [`generator_objective`] with respect to the policy logits, the
/// detector held fixed.
pub fn generator_gradient(world: &TabularWorld, policy: &[Vec<f64>], detector: &TabularDetector, beta: f64) -> Vec<Vec<f64>> {
    let qg = world.q_gen();
    (0..world.nx())
        .map(|x| {
            let p = &policy[x];
            let c: Vec<f64> = detector.values[x].iter().map(|f| 1.0 - f.ln()).collect();
            let mean_c: f64 = p.iter().zip(&c).map(|(a, b)| a * b).sum();
            (0..world.ny())
                .map(|k| qg[x] * p[k] * (c[k] - mean_c) + beta * world.q[x] * (p[k] - world.human[x][k]))
                .collect()
        })
        .collect()
}

/// Per-cell gradient ascent on the detector objective over a logit table,
/// with Newton steps safeguarded by backtracking. The numeric counterpart of
/// [`optimal_detector`].
pub fn fit_detector_numeric(world: &TabularWorld, policy: &[Vec<f64>], iterations: usize) -> TabularDetector {
    let qg = world.q_gen();
    let mut logits = vec![vec![0.0; world.ny()]; world.nx()];
    for x in 0..world.nx() {
        for y in 0..world.ny() {
            let a = world.q[x] * world.human[x][y];
            let b = qg[x] * policy[x][y];
            if a + b == 0.0 {
                continue;
            }
            let value = |l: f64| a * log_sigmoid(l) + b * log_sigmoid(-l);
            let mut l = 0.0_f64;
            for _ in 0..iterations {
                let s = 1.0 / (1.0 + (-l).exp());
                let g = a * (1.0 - s) - b * s;
                let h = (a + b) * s * (1.0 - s);
                if g.abs() < 1e-15 {
                    break;
                }
                let mut step = if h > 1e-300 { g / h } else { g.signum() };
                let before = value(l);
                while value(l + step) < before && step.abs() > 1e-16 {
                    step *= 0.5;
                }
                l += step;
            }
            logits[x][y] = l;
        }
    }
    TabularDetector::from_logits(&logits)
}

fn log_sigmoid(l: f64) -> f64 {
    if l > 0.0 {
        -(-l).exp().ln_1p()
    } else {
        l - l.exp().ln_1p()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlternateConfig {
    pub beta: f64,
    pub outer_steps: usize,
    pub inner_steps: usize,
    pub learning_rate: f64,
    /// Stop once both convergence measures fall below this; 0 disables.
    pub tolerance: f64,
}

impl Default for AlternateConfig {
    fn default() -> Self {
        Self {
            beta: 0.2,
            outer_steps: 5000,
            inner_steps: 1,
            learning_rate: 10.0,
            tolerance: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub avg_tv: f64,
    pub max_f_dev: f64,
    pub detector_objective: f64,
    pub generator_objective: f64,
}

/// Alternates the closed-form detector with backtracking gradient steps on
/// the generator logits. Point `s` describes the state after outer step `s`
/// (point 0 is the initial state).
pub fn alternate_optimize(
    world: &TabularWorld,
    init: TabularPolicy,
    config: &AlternateConfig,
) -> Result<Vec<TrajectoryPoint>, TheoryError> {
    let mut policy = init;
    let snapshot = |step: usize, policy: &TabularPolicy| {
        let p = policy.probs();
        let f = optimal_detector(world, &p);
        TrajectoryPoint {
            step,
            avg_tv: average_tv(world, &p),
            max_f_dev: f.max_deviation_from_half(),
            detector_objective: detector_objective(world, &p, &f),
            generator_objective: generator_objective(world, &p, &f, config.beta),
        }
    };
    let mut trajectory = vec![snapshot(0, &policy)];
    for step in 1..=config.outer_steps {
        let detector = optimal_detector(world, &policy.probs());
        for _ in 0..config.inner_steps {
            let p = policy.probs();
            let before = generator_objective(world, &p, &detector, config.beta);
            let grad = generator_gradient(world, &p, &detector, config.beta);
            let gnorm2: f64 = grad.iter().flatten().map(|g| g * g).sum();
            if gnorm2 == 0.0 {
                break;
            }
            let mut lr = config.learning_rate;
            loop {
                let cand = TabularPolicy {
                    logits: policy
                        .logits
                        .iter()
                        .zip(&grad)
                        .map(|(l, g)| l.iter().zip(g).map(|(a, b)| a - lr * b).collect())
                        .collect(),
                };
                let after = generator_objective(world, &cand.probs(), &detector, config.beta);
                // Armijo sufficient decrease
                if after <= before - 1e-4 * lr * gnorm2 || lr < 1e-12 {
                    if after <= before {
                        policy = cand;
                    }
                    break;
                }
                lr *= 0.5;
            }
        }
        let point = snapshot(step, &policy);
        if !point.generator_objective.is_finite() || !point.detector_objective.is_finite() {
            return Err(TheoryError::Diverged { step, trajectory });
        }
        let done = config.tolerance > 0.0 && point.avg_tv < config.tolerance && point.max_f_dev < config.tolerance;
        trajectory.push(point);
        if done {
            break;
        }
    }
    Ok(trajectory)
}
