//! Central finite-difference oracle for checking recorded gradients.
//!
//! Only loss *values* are used here, so the check stays independent of the
//! adjoint rules in [`super::Graph`].

use rand::seq::index::sample;
use rand::Rng;

use super::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(tensor index, element index, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Relative error with a floor on the denominator so that entries whose true
/// gradient is ~0 are judged on absolute error at the floor's scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` against central differences of `loss` on `samples`
/// randomly chosen scalar entries of `params` (all entries if fewer).
pub fn check_gradients<E>(
    params: &[Tensor],
    analytic: &[Tensor],
    mut loss: impl FnMut(&[Tensor]) -> Result<f64, E>,
    samples: usize,
    h: f64,
    rng: &mut impl Rng,
) -> Result<GradCheckReport, E> {
    let sizes: Vec<usize> = params.iter().map(Tensor::len).collect();
    let total: usize = sizes.iter().sum();
    let picks = sample(rng, total, samples.min(total));
    let mut perturbed = params.to_vec();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for flat in picks.iter() {
        let (mut t, mut e) = (0, flat);
        while e >= sizes[t] {
            e -= sizes[t];
            t += 1;
        }
        let orig = params[t].data()[e];
        perturbed[t].data_mut()[e] = orig + h;
        let up = loss(&perturbed)?;
        perturbed[t].data_mut()[e] = orig - h;
        let down = loss(&perturbed)?;
        perturbed[t].data_mut()[e] = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[t].data()[e];
        let err = relative_error(a, numeric);
        report.checked += 1;
        if err >= report.max_rel_error {
            report.max_rel_error = err;
            report.worst = Some((t, e, a, numeric));
        }
    }
    Ok(report)
}
