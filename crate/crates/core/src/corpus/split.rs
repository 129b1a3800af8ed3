use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, Dataset, Label};

/// User indices of the three parts, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn parts(&self) -> [&[usize]; 3] {
        [&self.train, &self.val, &self.test]
    }

    /// Boolean membership mask over all `n` users for one part.
    pub fn mask(part: &[usize], n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &i in part {
            m[i] = true;
        }
        m
    }
}

/// Largest-remainder allocation of `n` items to `ratios`; ties in the
/// remainder go to the earlier part.
fn allocate(n: usize, ratios: &[f64; 3]) -> [usize; 3] {
    let total: f64 = ratios.iter().sum();
    let exact: Vec<f64> = ratios.iter().map(|r| n as f64 * r / total).collect();
    let mut out = [0usize; 3];
    for (o, e) in out.iter_mut().zip(&exact) {
        *o = e.floor() as usize;
    }
    let mut left = n - out.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).filter(|&i| ratios[i] > 0.0).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Stratified train/val/test split by label.
pub fn split_dataset(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Split, CorpusError> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || ratios.iter().sum::<f64>() <= 0.0 {
        return Err(CorpusError::InvalidArgument(format!(
            "split ratios must be non-negative with a positive sum, got {ratios:?}"
        )));
    }
    let parts = ratios.iter().filter(|r| **r > 0.0).count();
    if dataset.len() < parts {
        return Err(CorpusError::TooFewUsers {
            users: dataset.len(),
            parts,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: [Vec<usize>; 3] = Default::default();
    for label in [Label::Human, Label::Bot] {
        let mut members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.users()[i].label == label)
            .collect();
        members.shuffle(&mut rng);
        let counts = allocate(members.len(), &ratios);
        let mut rest = members.as_slice();
        for (part, &c) in out.iter_mut().zip(&counts) {
            let (head, tail) = rest.split_at(c);
            part.extend_from_slice(head);
            rest = tail;
        }
    }
    for part in out.iter_mut() {
        part.sort_unstable();
    }
    let [train, val, test] = out;
    Ok(Split { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder() {
        assert_eq!(allocate(80, &[8.0, 1.0, 1.0]), [64, 8, 8]);
        assert_eq!(allocate(20, &[8.0, 1.0, 1.0]), [16, 2, 2]);
        assert_eq!(allocate(7, &[1.0, 0.0, 0.0]), [7, 0, 0]);
        assert_eq!(allocate(5, &[8.0, 1.0, 1.0]), [4, 1, 0]);
        assert_eq!(allocate(0, &[8.0, 1.0, 1.0]), [0, 0, 0]);
    }
}
