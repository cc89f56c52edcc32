//! Central finite-difference gradient checking.
//!
//! Works on any scalar function of a list of tensors, independent of the
//! tape, so it can be pointed at the tape's own gradients.

use crate::error::Result;
use crate::tensor::Tensor;

/// Worst element-wise disagreement between an analytic and numeric gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps near-zero entries from
/// turning round-off into huge ratios.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central differences of `f` with respect to every entry of every tensor in
/// `params`, compared against `analytic` (same layout).
pub fn check<F>(params: &[Tensor<f64>], analytic: &[Tensor<f64>], step: f64, mut f: F) -> Result<GradCheck>
where
    F: FnMut(&[Tensor<f64>]) -> Result<f64>,
{
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    for (p, g) in analytic.iter().enumerate() {
        for i in 0..work[p].numel() {
            let orig = work[p].data()[i];
            work[p].data_mut()[i] = orig + step;
            let plus = f(&work)?;
            work[p].data_mut()[i] = orig - step;
            let minus = f(&work)?;
            work[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = g.data()[i];
            out.max_abs_error = out.max_abs_error.max((a - numeric).abs());
            out.max_rel_error = out.max_rel_error.max(relative_error(a, numeric, 1e-6));
            out.checked += 1;
        }
    }
    Ok(out)
}
