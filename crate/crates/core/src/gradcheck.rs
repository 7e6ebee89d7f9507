//! Central finite-difference checks of analytic gradients.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Denominator floor of [`relative_error`], so entries whose true gradient
/// is numerically zero are judged by absolute error.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// `(tensor, element, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compares `analytic[i]` with `(f(x + eps·e_i) − f(x − eps·e_i)) / 2eps` on
/// `samples` entries drawn uniformly over all elements of `inputs`.
pub fn check<F>(inputs: &[Tensor], analytic: &[Tensor], f: F, samples: usize, eps: f64, seed: u64) -> GradCheckReport
where
    F: Fn(&[Tensor]) -> f64,
{
    assert_eq!(inputs.len(), analytic.len());
    let total: usize = inputs.iter().map(Tensor::numel).sum();
    assert!(total > 0, "nothing to check");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = inputs.to_vec();
    let mut report = GradCheckReport { checked: 0, max_rel_err: 0.0, worst: None };
    for _ in 0..samples {
        let mut flat = rng.gen_range(0..total);
        let mut ti = 0;
        while flat >= work[ti].numel() {
            flat -= work[ti].numel();
            ti += 1;
        }
        let orig = work[ti].data()[flat];
        work[ti].data_mut()[flat] = orig + eps;
        let up = f(&work);
        work[ti].data_mut()[flat] = orig - eps;
        let down = f(&work);
        work[ti].data_mut()[flat] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[ti].data()[flat];
        let err = relative_error(a, numeric);
        report.checked += 1;
        if err >= report.max_rel_err {
            report.max_rel_err = err;
            report.worst = Some((ti, flat, a, numeric));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_correct_and_wrong_gradients() {
        let x = vec![Tensor::from_vec(&[3], vec![0.3, -1.2, 2.0])];
        let f = |t: &[Tensor]| t[0].data().iter().map(|v| v * v * v).sum::<f64>();
        let good = vec![x[0].map(|v| 3.0 * v * v)];
        assert!(check(&x, &good, f, 20, 1e-5, 1).max_rel_err < 1e-8);
        let bad = vec![x[0].map(|v| 2.0 * v * v)];
        assert!(check(&x, &bad, f, 20, 1e-5, 1).max_rel_err > 0.1);
    }
}
