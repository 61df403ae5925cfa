//! Padé activation unit and learnable sine activation, with exact gradients.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::lstsq_min_norm;

/// Numerator degree `J`; the numerator has `J + 1` coefficients.
pub const PAU_NUMER_DEGREE: usize = 5;
/// Denominator degree `K`; the constant term is fixed to 1.
pub const PAU_DENOM_DEGREE: usize = 4;
/// `|Q(x)|` below this is treated as a pole.
pub const PAU_POLE_TOL: f64 = 1e-8;

const INIT_RANGE: f64 = 3.0;
const INIT_POINTS: usize = 1001;

/// `PAU(x) = (a_0 + … + a_J x^J) / (1 + b_1 x + … + b_K x^K)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PauParams {
    /// `a_0..a_J`.
    pub numer: Vec<f64>,
    /// `b_1..b_K`.
    pub denom: Vec<f64>,
}

impl PauParams {
    pub fn identity() -> Self {
        let mut numer = vec![0.0; PAU_NUMER_DEGREE + 1];
        numer[1] = 1.0;
        PauParams {
            numer,
            denom: vec![0.0; PAU_DENOM_DEGREE],
        }
    }

    pub fn constant(c: f64) -> Self {
        let mut numer = vec![0.0; PAU_NUMER_DEGREE + 1];
        numer[0] = c;
        PauParams {
            numer,
            denom: vec![0.0; PAU_DENOM_DEGREE],
        }
    }

    /// Least-squares rational fit to the rectified-linear function on
    /// `[-3, 3]`, computed once from the linearized system
    /// `P(x) − ReLU(x)·(Q(x) − 1) = ReLU(x)`.
    pub fn relu_init() -> Self {
        static INIT: OnceLock<PauParams> = OnceLock::new();
        INIT.get_or_init(|| {
            let (j, k) = (PAU_NUMER_DEGREE, PAU_DENOM_DEGREE);
            let xs: Vec<f64> = (0..INIT_POINTS)
                .map(|i| -INIT_RANGE + 2.0 * INIT_RANGE * i as f64 / (INIT_POINTS - 1) as f64)
                .collect();
            let relu = |x: f64| x.max(0.0);
            let a = DMatrix::from_fn(xs.len(), j + 1 + k, |r, c| {
                let x = xs[r];
                if c <= j {
                    x.powi(c as i32)
                } else {
                    -relu(x) * x.powi((c - j) as i32)
                }
            });
            let y = DVector::from_iterator(xs.len(), xs.iter().map(|&x| relu(x)));
            let sol = lstsq_min_norm(&a, &y).expect("fixed, finite initialization system");
            PauParams {
                numer: sol.as_slice()[..=j].to_vec(),
                denom: sol.as_slice()[j + 1..].to_vec(),
            }
        })
        .clone()
    }

    pub fn validate(&self) -> Result<()> {
        if self.numer.len() != PAU_NUMER_DEGREE + 1 || self.denom.len() != PAU_DENOM_DEGREE {
            return Err(Error::InvalidInput(format!(
                "PAU needs {} numerator and {} denominator coefficients, got {} and {}",
                PAU_NUMER_DEGREE + 1,
                PAU_DENOM_DEGREE,
                self.numer.len(),
                self.denom.len()
            )));
        }
        if self.numer.iter().chain(&self.denom).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "PAU coefficients".into(),
            });
        }
        Ok(())
    }

    /// `(P, P', Q, Q')` at `x` by Horner's scheme.
    #[inline]
    pub(crate) fn eval_parts(&self, x: f64) -> (f64, f64, f64, f64) {
        let (mut p, mut dp) = (0.0, 0.0);
        for &a in self.numer.iter().rev() {
            dp = dp * x + p;
            p = p * x + a;
        }
        // Q(x) = 1 + x·(b_1 + b_2 x + …)
        let (mut q, mut dq) = (0.0, 0.0);
        for &b in self.denom.iter().rev() {
            dq = dq * x + q;
            q = q * x + b;
        }
        // d/dx [1 + x r(x)] = r(x) + x r'(x)
        (p, dp, 1.0 + x * q, q + x * dq)
    }

    #[inline]
    pub(crate) fn checked_parts(&self, x: f64) -> Result<(f64, f64, f64, f64)> {
        let parts = self.eval_parts(x);
        if !(parts.2.abs() >= PAU_POLE_TOL) {
            return Err(Error::PoleProximity {
                input: x,
                value: parts.2,
            });
        }
        Ok(parts)
    }

    fn zeros_like(&self) -> PauParams {
        PauParams {
            numer: vec![0.0; self.numer.len()],
            denom: vec![0.0; self.denom.len()],
        }
    }

    /// Adds the parameter gradient of `upstream · PAU(x)` into `grad` and
    /// returns `d PAU / dx · upstream`.
    #[inline]
    pub(crate) fn backward_into(&self, x: f64, upstream: f64, grad: &mut PauParams) -> Result<f64> {
        let (p, dp, q, dq) = self.checked_parts(x)?;
        let inv_q = 1.0 / q;
        let y = p * inv_q;
        let g = upstream * inv_q;
        let mut pow = 1.0;
        for ga in grad.numer.iter_mut() {
            *ga += g * pow;
            pow *= x;
        }
        // dy/db_k = −P x^k / Q² = −y x^k / Q
        let mut pow = x;
        for gb in grad.denom.iter_mut() {
            *gb -= g * y * pow;
            pow *= x;
        }
        Ok(g * (dp - y * dq))
    }
}

/// Elementwise PAU; fails at the first element within the pole tolerance.
pub fn pau_forward(x: &[f64], p: &PauParams) -> Result<Vec<f64>> {
    p.validate()?;
    x.iter()
        .map(|&v| {
            let (num, _, q, _) = p.checked_parts(v)?;
            let y = num / q;
            if y.is_finite() {
                Ok(y)
            } else {
                Err(Error::NonFinite {
                    what: format!("PAU output at input {v}"),
                })
            }
        })
        .collect()
}

/// Input and coefficient gradients of `Σ upstream_i · PAU(x_i)`.
pub fn pau_gradients(x: &[f64], p: &PauParams, upstream: &[f64]) -> Result<(Vec<f64>, PauParams)> {
    p.validate()?;
    if x.len() != upstream.len() {
        return Err(Error::WidthMismatch {
            expected: x.len(),
            actual: upstream.len(),
        });
    }
    let mut grad = p.zeros_like();
    let dx = x
        .iter()
        .zip(upstream)
        .map(|(&v, &u)| p.backward_into(v, u, &mut grad))
        .collect::<Result<Vec<_>>>()?;
    Ok((dx, grad))
}

/// `sin(ν x)` with trainable frequency `ν`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineParams {
    pub nu: f64,
}

impl Default for SineParams {
    fn default() -> Self {
        SineParams { nu: 1.0 }
    }
}

pub fn sine_forward(x: &[f64], s: &SineParams) -> Vec<f64> {
    x.iter().map(|&v| (s.nu * v).sin()).collect()
}

/// `(dx, dν)` of `Σ upstream_i · sin(ν x_i)`.
pub fn sine_gradients(x: &[f64], s: &SineParams, upstream: &[f64]) -> (Vec<f64>, f64) {
    let mut dnu = 0.0;
    let dx = x
        .iter()
        .zip(upstream)
        .map(|(&v, &u)| {
            let c = (s.nu * v).cos();
            dnu += u * v * c;
            u * s.nu * c
        })
        .collect();
    (dx, dnu)
}
