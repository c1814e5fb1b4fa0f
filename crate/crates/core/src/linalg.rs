//! Symmetric positive-definite solves with a one-shot ridge jitter.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{GacmError, Result};

/// Relative size of the diagonal jitter, scaled by `trace / dim`.
pub const JITTER: f64 = 1e-10;

/// Cholesky factor of `a`, retrying once with `JITTER * trace / dim` on the diagonal.
///
/// Returns the factor and whether the jitter was needed.
pub fn spd_factor(mut a: DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, bool)> {
    let dim = a.nrows();
    if dim == 0 {
        return Ok((Cholesky::new(a).ok_or(GacmError::Singular)?, false));
    }
    if let Some(ch) = Cholesky::new(a.clone()) {
        if ch.l_dirty().diagonal().iter().all(|v| v.is_finite() && *v > 0.0) {
            return Ok((ch, false));
        }
    }
    let trace = a.trace();
    let bump = JITTER * trace.abs().max(f64::MIN_POSITIVE) / dim as f64;
    for i in 0..dim {
        a[(i, i)] += bump;
    }
    let ch = Cholesky::new(a).ok_or(GacmError::Singular)?;
    if !ch.l_dirty().diagonal().iter().all(|v| v.is_finite() && *v > 0.0) {
        return Err(GacmError::Singular);
    }
    Ok((ch, true))
}

pub fn spd_solve(a: DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, bool)> {
    let (ch, jittered) = spd_factor(a)?;
    let x = ch.solve(b);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GacmError::Singular);
    }
    Ok((x, jittered))
}

/// `Z^T diag(w) Z` for nonnegative weights.
pub fn weighted_gram(z: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut zw = z.clone();
    for (i, &wi) in w.iter().enumerate() {
        let s = wi.sqrt();
        zw.row_mut(i).scale_mut(s);
    }
    zw.tr_mul(&zw)
}
