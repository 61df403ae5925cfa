//! Rational (Padé-type) approximation of the transfer magnitude as a
//! function of body mass at a fixed frequency.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{condition_number, lstsq_min_norm};

pub const NUMER_ORDER: usize = 4;
pub const DENOM_ORDER: usize = 4;

const MIN_SAMPLES: usize = 20;
const MAX_CONDITION: f64 = 1e12;
const ROOT_CHECK_POINTS: usize = 2001;
const DENOM_FLOOR: f64 = 1e-8;

/// `H(m0) ≈ Σ a_i t^i / (1 + Σ b_j t^j)` with `t = (m0 − center) / scale`.
///
/// The fit is carried out in the normalized variable `t ∈ [−1, 1]`;
/// [`coefficients_in_mass`](Self::coefficients_in_mass) re-expresses it in
/// raw powers of `m0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PadeFit {
    pub numer_coeffs: Vec<f64>,
    pub denom_coeffs: Vec<f64>,
    pub center: f64,
    pub scale: f64,
    pub rel_residual: f64,
}

impl PadeFit {
    fn t(&self, m0: f64) -> f64 {
        (m0 - self.center) / self.scale
    }

    fn numer(&self, t: f64) -> f64 {
        horner(&self.numer_coeffs, t)
    }

    fn denom(&self, t: f64) -> f64 {
        1.0 + t * horner(&self.denom_coeffs, t)
    }

    pub fn eval(&self, m0: f64) -> f64 {
        let t = self.t(m0);
        self.numer(t) / self.denom(t)
    }

    /// Coefficients `(a_0.., b_1..)` of `Σ a_i m0^i / (1 + Σ b_j m0^j)`.
    /// `None` when the denominator vanishes at `m0 = 0`.
    pub fn coefficients_in_mass(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let p = shift_polynomial(&self.numer_coeffs, self.center, self.scale);
        let mut q_t = vec![1.0];
        q_t.extend_from_slice(&self.denom_coeffs);
        let q = shift_polynomial(&q_t, self.center, self.scale);
        let q0 = q[0];
        if q0.abs() < 1e-300 || !q0.is_finite() {
            return None;
        }
        let a = p.iter().map(|v| v / q0).collect();
        let b = q[1..].iter().map(|v| v / q0).collect();
        Some((a, b))
    }
}

/// Ascending-order polynomial evaluation.
fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

/// Rewrites `Σ c_i ((m − center)/scale)^i` as ascending powers of `m`.
fn shift_polynomial(c: &[f64], center: f64, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; c.len()];
    // (m − center)^i / scale^i, expanded binomially.
    for (i, &ci) in c.iter().enumerate() {
        let factor = ci / scale.powi(i as i32);
        let mut binom = 1.0;
        for (k, o) in out.iter_mut().enumerate().take(i + 1) {
            // coefficient of m^k in (m − center)^i
            let term = binom * (-center).powi((i - k) as i32);
            *o += factor * term;
            binom = binom * (i - k) as f64 / (k + 1) as f64;
        }
    }
    out
}

/// Linearized least-squares fit `H·(1 + Σ b_j t^j) = Σ a_i t^i` over the
/// sampled masses. Degenerate (exactly lower-order) data resolve to the
/// minimum-norm coefficients; a mass grid that cannot pin down the
/// coefficients is rejected with its condition number.
pub fn pade_fit(masses: &[f64], h_values: &[f64], numer_order: usize, denom_order: usize) -> Result<PadeFit> {
    if masses.len() != h_values.len() {
        return Err(Error::InvalidInput(format!(
            "{} masses but {} transfer values",
            masses.len(),
            h_values.len()
        )));
    }
    if masses.len() < MIN_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "rational fit needs at least {MIN_SAMPLES} mass samples, got {}",
            masses.len()
        )));
    }
    if masses.iter().chain(h_values).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "rational-fit samples".into(),
        });
    }
    let lo = masses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = masses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let center = 0.5 * (lo + hi);
    let scale = if hi > lo { 0.5 * (hi - lo) } else { 1.0 };
    let ts: Vec<f64> = masses.iter().map(|m| (m - center) / scale).collect();

    let ncols = numer_order + 1 + denom_order;
    let vandermonde = DMatrix::from_fn(ts.len(), ncols, |r, c| ts[r].powi(c as i32));
    let condition = condition_number(&vandermonde);
    if !(condition < MAX_CONDITION) {
        return Err(Error::RankDeficient { condition });
    }

    let design = DMatrix::from_fn(ts.len(), ncols, |r, c| {
        if c <= numer_order {
            ts[r].powi(c as i32)
        } else {
            -h_values[r] * ts[r].powi((c - numer_order) as i32)
        }
    });
    let x = lstsq_min_norm(&design, &DVector::from_column_slice(h_values))?;

    let mut fit = PadeFit {
        numer_coeffs: x.as_slice()[..=numer_order].to_vec(),
        denom_coeffs: x.as_slice()[numer_order + 1..].to_vec(),
        center,
        scale,
        rel_residual: 0.0,
    };

    for i in 0..ROOT_CHECK_POINTS {
        let t = -1.0 + 2.0 * i as f64 / (ROOT_CHECK_POINTS - 1) as f64;
        let q = fit.denom(t);
        if q.abs() < DENOM_FLOOR || q.signum() != fit.denom(-1.0).signum() {
            return Err(Error::PoleProximity {
                input: center + scale * t,
                value: q,
            });
        }
    }

    let (mut err2, mut ref2) = (0.0, 0.0);
    for (&m, &h) in masses.iter().zip(h_values) {
        err2 += (fit.eval(m) - h).powi(2);
        ref2 += h * h;
    }
    fit.rel_residual = if ref2 > 0.0 { (err2 / ref2).sqrt() } else { err2.sqrt() };
    Ok(fit)
}
