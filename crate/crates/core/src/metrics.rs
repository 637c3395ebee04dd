use nalgebra::DMatrix;

use crate::data::Mask;
use crate::error::{Error, Result};
use crate::linalg::orthonormalize;

/// Root mean squared error over the missing entries (`M = 0`) only.
pub fn rmse_missing(xhat: &DMatrix<f64>, xtrue: &DMatrix<f64>, mask: &Mask) -> Result<f64> {
    if xhat.shape() != xtrue.shape() || xhat.shape() != mask.shape() {
        return Err(Error::Shape {
            expected: xtrue.shape(),
            found: xhat.shape(),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in 0..xhat.ncols() {
        for i in 0..xhat.nrows() {
            if !mask.is_observed(i, j) {
                let d = xhat[(i, j)] - xtrue[(i, j)];
                sum += d * d;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyEvaluationSet);
    }
    Ok((sum / count as f64).sqrt())
}

/// Subspace estimation performance: `tr(U_trueᵀ (I − P_hat) U_true) / r`,
/// where `P_hat` projects onto `span(U_hat)`.
///
/// Both bases are orthonormalized first, so the value lies in `[0, 1]`, is
/// zero iff the spans coincide and does not depend on the choice of basis.
pub fn sep(u_hat: &DMatrix<f64>, u_true: &DMatrix<f64>) -> Result<f64> {
    if u_hat.shape() != u_true.shape() {
        return Err(Error::Shape {
            expected: u_true.shape(),
            found: u_hat.shape(),
        });
    }
    let q_hat = orthonormalize(u_hat)?;
    let q_true = orthonormalize(u_true)?;
    let r = q_true.ncols() as f64;
    let overlap = (q_hat.transpose() * &q_true).norm_squared();
    Ok(((r - overlap) / r).clamp(0.0, 1.0))
}
