//! Small dense least-squares helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff for the minimum-norm solve.
pub const SVD_RTOL: f64 = 1e-12;

/// Minimum-norm least-squares solution of `a x ≈ y` via truncated SVD.
///
/// Singular values below `SVD_RTOL * s_max` are dropped, so rank-deficient
/// but consistent systems resolve to their smallest-norm solution.
pub fn lstsq_min_norm(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() != y.len() {
        return Err(Error::InvalidInput(format!(
            "design has {} rows but target has {}",
            a.nrows(),
            y.len()
        )));
    }
    if a.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "least-squares system".into(),
        });
    }
    // Column equilibration keeps the cutoff meaningful for badly scaled columns.
    let scales: Vec<f64> = (0..a.ncols())
        .map(|j| {
            let n = a.column(j).norm();
            if n > 0.0 {
                n
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = a.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).unscale_mut(*s);
    }
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return Ok(DVector::zeros(a.ncols()));
    }
    let mut x = svd
        .solve(y, SVD_RTOL * smax)
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    for (j, s) in scales.iter().enumerate() {
        x[j] /= s;
    }
    Ok(x)
}

/// 2-norm condition number (σ_max / σ_min) of `a`; infinite when singular.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}
