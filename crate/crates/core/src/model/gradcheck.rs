use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParamGrads, ParamStore};
use crate::error::Result;

/// One scalar inside a parameter store: `(tensor, row, col)`.
pub type Coord = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst: Option<Coord>,
    pub checked: usize,
}

/// Samples `n` coordinates uniformly over all scalars of `params`.
pub fn sample_coords(params: &ParamStore, n: usize, seed: u64) -> Vec<Coord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = params.num_scalars();
    if total == 0 {
        return Vec::new();
    }
    (0..n)
        .map(|_| {
            let mut flat = rng.random_range(0..total);
            for (i, t) in params.tensors().iter().enumerate() {
                if flat < t.len() {
                    return (i, flat / t.ncols(), flat % t.ncols());
                }
                flat -= t.len();
            }
            unreachable!()
        })
        .collect()
}

/// Every coordinate of every tensor in `params`.
pub fn all_coords(params: &ParamStore) -> Vec<Coord> {
    params
        .tensors()
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.nrows()).flat_map(move |r| (0..t.ncols()).map(move |c| (i, r, c))))
        .collect()
}

/// Compares the analytic gradient from `loss_and_grads` with central finite
/// differences of step `epsilon` at each coordinate.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn gradient_check<F>(params: &ParamStore, coords: &[Coord], epsilon: f64, loss_and_grads: F) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, ParamGrads)>,
{
    let (_, analytic) = loss_and_grads(params)?;
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        checked: 0,
    };
    for &(i, r, c) in coords {
        let original = probe.tensors()[i][[r, c]];
        probe.tensors_mut()[i][[r, c]] = original + epsilon;
        let (plus, _) = loss_and_grads(&probe)?;
        probe.tensors_mut()[i][[r, c]] = original - epsilon;
        let (minus, _) = loss_and_grads(&probe)?;
        probe.tensors_mut()[i][[r, c]] = original;

        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = if analytic.iter().next().is_some() {
            analytic.get(i)[[r, c]]
        } else {
            0.0
        };
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(1e-6);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.worst = Some((i, r, c));
        }
        report.max_rel_error = report.max_rel_error.max(rel);
        report.max_abs_error = report.max_abs_error.max(abs);
        report.checked += 1;
    }
    Ok(report)
}
