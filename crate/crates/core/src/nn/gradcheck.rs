//! Central finite-difference gradient checks.

use ndarray::Array2;
use rand::Rng as _;

use super::params::{ParamId, ParamStore};
use crate::rng::Rng;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub checked: usize,
}

/// Relative error between two gradient vectors, measured on their norms.
///
/// The denominator is floored at `GRAD_NORM_FLOOR`, so tensors whose true
/// gradient vanishes are judged by absolute error.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(GRAD_NORM_FLOOR)
}

pub const GRAD_NORM_FLOOR: f64 = 1e-4;

/// Checks every parameter tensor in `store` on up to `samples` coordinates each.
///
/// `f` returns the loss and the analytic gradient per parameter slot.
pub fn check_store<F>(store: &mut ParamStore, mut f: F, eps: f64, samples: usize, rng: &mut Rng) -> GradCheckReport
where
    F: FnMut(&ParamStore) -> (f64, Vec<Option<Array2<f64>>>),
{
    let (_, grads) = f(store);
    let mut report = GradCheckReport::default();
    for (pi, grad) in grads.iter().enumerate() {
        let len = store.values()[pi].len();
        let zero = Array2::zeros(store.values()[pi].raw_dim());
        let grad = grad.as_ref().unwrap_or(&zero);
        let coords: Vec<usize> = if len <= samples {
            (0..len).collect()
        } else {
            (0..samples).map(|_| rng.random_range(0..len)).collect()
        };
        let mut analytic = Vec::with_capacity(coords.len());
        let mut numeric = Vec::with_capacity(coords.len());
        for &c in &coords {
            let orig = store.values()[pi].as_slice().unwrap()[c];
            store.values_mut()[pi].as_slice_mut().unwrap()[c] = orig + eps;
            let (lp, _) = f(store);
            store.values_mut()[pi].as_slice_mut().unwrap()[c] = orig - eps;
            let (lm, _) = f(store);
            store.values_mut()[pi].as_slice_mut().unwrap()[c] = orig;
            analytic.push(grad.as_slice().unwrap()[c]);
            numeric.push((lp - lm) / (2.0 * eps));
        }
        let err = relative_error(&analytic, &numeric);
        report.checked += coords.len();
        if err >= report.max_rel_err {
            report.max_rel_err = err;
            report.worst_param = store.name(ParamId::from_index(pi)).to_string();
        }
    }
    report
}

/// Checks the gradient of a scalar function of one input tensor at every coordinate.
pub fn check_inputs<F>(x: &Array2<f64>, f: F, analytic: &Array2<f64>, eps: f64) -> f64
where
    F: Fn(&Array2<f64>) -> f64,
{
    let mut numeric = Vec::with_capacity(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = x.as_slice().unwrap()[i];
        xp.as_slice_mut().unwrap()[i] = orig + eps;
        let lp = f(&xp);
        xp.as_slice_mut().unwrap()[i] = orig - eps;
        let lm = f(&xp);
        xp.as_slice_mut().unwrap()[i] = orig;
        numeric.push((lp - lm) / (2.0 * eps));
    }
    relative_error(analytic.as_slice().unwrap(), &numeric)
}
