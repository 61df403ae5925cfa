//! Modal physics of a simply supported rectangular plate carrying a body
//! mass spread over a rectangular contact patch.
//!
//! The plate obeys Kirchhoff bending with viscous damping; the body enters
//! as a distributed inertia `m0 / S` over its contact patch. Projecting onto
//! the simply supported modes `φ_mn(x, y) = sin(mπx/a)·sin(nπy/b)` gives,
//! per unit point force at the source,
//!
//! ```text
//! v(x, y, ω) = Σ_mn  iω φ_mn(src) φ_mn(x, y)
//!                   / (−ω²(μ C2 + (m0/S) C3) + 2iω μ ω_b C2 + D C1)
//! ```
//!
//! with `C2 = ∫∫ φ²` over the plate, `C1 = k⁴ C2` (`k² = (mπ/a)² + (nπ/b)²`)
//! and `C3 = ∫∫ φ²` over the contact patch.

mod pade;

pub use pade::{pade_fit, PadeFit, DENOM_ORDER, NUMER_ORDER};

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default per-axis mode truncation (25 modes in total).
pub const DEFAULT_MODE_CAP: u32 = 5;

/// A modal denominator smaller than this fraction of its stiffness term is
/// treated as an undamped resonance.
const RESONANCE_RTOL: f64 = 1e-12;

/// Geometry, material and damping of one deck board.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateSpec {
    /// Length along x, m.
    pub length_a: f64,
    /// Width along y, m.
    pub width_b: f64,
    /// Thickness, m.
    pub thickness_h: f64,
    /// Young's modulus, Pa.
    pub youngs_e: f64,
    pub poisson_nu: f64,
    /// Mass per unit area, kg/m².
    pub area_density_mu: f64,
    /// Damping circular frequency ω_b, rad/s.
    pub damping_omega_b: f64,
}

impl PlateSpec {
    /// 600 × 400 × 5 mm aluminium plate, lightly damped.
    pub fn desk_aluminium() -> Self {
        PlateSpec {
            length_a: 0.6,
            width_b: 0.4,
            thickness_h: 0.005,
            youngs_e: 69e9,
            poisson_nu: 0.33,
            area_density_mu: 13.5,
            damping_omega_b: 5.0,
        }
    }

    /// Effective single-deck bed board, 2.44 × 1.22 m. Stiffness and areal
    /// mass are effective values for deck, frame and mattress together;
    /// the fundamental sits near 560 Hz.
    pub fn bed_deck() -> Self {
        PlateSpec {
            length_a: 2.44,
            width_b: 1.22,
            thickness_h: 0.14,
            youngs_e: 2.15e11,
            poisson_nu: 0.3,
            area_density_mu: 300.0,
            damping_omega_b: 200.0,
        }
    }

    /// One of four steel deck boards of a 2.31 × 0.91 m hospital bed.
    pub fn steel_deck_board() -> Self {
        PlateSpec {
            length_a: 2.31 / 4.0,
            width_b: 0.91,
            thickness_h: 0.0384,
            youngs_e: 2.0e11,
            poisson_nu: 0.3,
            area_density_mu: 150.0,
            damping_omega_b: 200.0,
        }
    }

    /// Bending rigidity `D = E h³ / (12 (1 − ν²))`, N·m.
    pub fn bending_rigidity(&self) -> f64 {
        self.youngs_e * self.thickness_h.powi(3) / (12.0 * (1.0 - self.poisson_nu * self.poisson_nu))
    }

    pub fn area(&self) -> f64 {
        self.length_a * self.width_b
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("length_a", self.length_a),
            ("width_b", self.width_b),
            ("thickness_h", self.thickness_h),
            ("youngs_e", self.youngs_e),
            ("poisson_nu", self.poisson_nu),
            ("area_density_mu", self.area_density_mu),
            ("damping_omega_b", self.damping_omega_b),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "plate {name} must be finite and > 0, got {v}"
                )));
            }
        }
        if self.poisson_nu >= 0.5 {
            return Err(Error::InvalidInput(format!(
                "plate poisson_nu must lie in (0, 0.5), got {}",
                self.poisson_nu
            )));
        }
        let d = self.bending_rigidity();
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::InvalidInput(format!(
                "bending rigidity {d} is not finite and positive"
            )));
        }
        Ok(())
    }

    /// Like [`validate`](Self::validate) but accepts zero damping, which the
    /// response operations handle explicitly.
    fn validate_allow_undamped(&self) -> Result<()> {
        if self.damping_omega_b == 0.0 {
            PlateSpec {
                damping_omega_b: 1.0,
                ..*self
            }
            .validate()
        } else {
            self.validate()
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        (0.0..=self.length_a).contains(&p.x) && (0.0..=self.width_b).contains(&p.y)
    }

    fn check_point(&self, p: Point, what: &str) -> Result<()> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "{what} ({}, {}) lies outside the {} × {} m plate",
                p.x, p.y, self.length_a, self.width_b
            )))
        }
    }
}

/// A position on the plate, m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Rectangular bed–body contact region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactPatch {
    pub center_x: f64,
    pub center_y: f64,
    pub extent_x: f64,
    pub extent_y: f64,
}

impl ContactPatch {
    /// The whole plate as a patch.
    pub fn full(plate: &PlateSpec) -> Self {
        ContactPatch {
            center_x: plate.length_a / 2.0,
            center_y: plate.width_b / 2.0,
            extent_x: plate.length_a,
            extent_y: plate.width_b,
        }
    }

    pub fn area(&self) -> f64 {
        self.extent_x * self.extent_y
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.center_x - self.extent_x / 2.0, self.center_x + self.extent_x / 2.0)
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.center_y - self.extent_y / 2.0, self.center_y + self.extent_y / 2.0)
    }

    pub fn validate(&self, plate: &PlateSpec) -> Result<()> {
        if !(self.extent_x > 0.0 && self.extent_y > 0.0) || !self.area().is_finite() {
            return Err(Error::InvalidInput(format!(
                "contact patch extents must be positive, got {} × {}",
                self.extent_x, self.extent_y
            )));
        }
        // Allow round-off at the edges of a full-plate patch.
        let tol = 1e-12 * plate.length_a.max(plate.width_b);
        let (x0, x1) = self.x_range();
        let (y0, y1) = self.y_range();
        if x0 < -tol || y0 < -tol || x1 > plate.length_a + tol || y1 > plate.width_b + tol {
            return Err(Error::Domain(format!(
                "contact patch [{x0}, {x1}] × [{y0}, {y1}] exceeds the plate"
            )));
        }
        Ok(())
    }
}

/// Body mass resting on a contact patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyLoad {
    pub mass_m0: f64,
    pub patch: ContactPatch,
}

impl BodyLoad {
    pub fn new(mass_m0: f64, patch: ContactPatch) -> Self {
        BodyLoad { mass_m0, patch }
    }

    pub fn validate(&self, plate: &PlateSpec) -> Result<()> {
        if !(self.mass_m0.is_finite() && self.mass_m0 >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "body mass must be finite and >= 0, got {}",
                self.mass_m0
            )));
        }
        self.patch.validate(plate)
    }
}

/// Mode numbers (m, n) along x and y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeIndex {
    pub m: u32,
    pub n: u32,
}

impl ModeIndex {
    pub fn new(m: u32, n: u32) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidInput(format!("mode numbers start at 1, got ({m}, {n})")));
        }
        Ok(ModeIndex { m, n })
    }

    fn wavenumbers(&self, plate: &PlateSpec) -> (f64, f64) {
        (self.m as f64 * PI / plate.length_a, self.n as f64 * PI / plate.width_b)
    }
}

/// Complex amplitudes on a strictly increasing frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexSpectrum {
    freq_hz: Vec<f64>,
    values: Vec<Complex64>,
}

impl ComplexSpectrum {
    pub fn new(freq_hz: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if freq_hz.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "spectrum has {} frequencies but {} values",
                freq_hz.len(),
                values.len()
            )));
        }
        check_grid(&freq_hz)?;
        Ok(ComplexSpectrum { freq_hz, values })
    }

    pub fn freq_hz(&self) -> &[f64] {
        &self.freq_hz
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }
}

pub(crate) fn check_grid(freq_hz: &[f64]) -> Result<()> {
    if freq_hz.iter().any(|f| !f.is_finite() || *f < 0.0) {
        return Err(Error::InvalidInput(
            "frequency grid must be finite and non-negative".into(),
        ));
    }
    if freq_hz.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("frequency grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Galerkin projections of one mode: stiffness (`C1`), plate inertia (`C2`)
/// and contact-patch inertia (`C3`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModalCoefficients {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// `sin(mπx/a)·sin(nπy/b)`.
pub fn mode_shape(plate: &PlateSpec, mode: ModeIndex, x: f64, y: f64) -> Result<f64> {
    plate.check_point(Point::new(x, y), "mode-shape point")?;
    Ok(mode_shape_unchecked(plate, mode, x, y))
}

fn mode_shape_unchecked(plate: &PlateSpec, mode: ModeIndex, x: f64, y: f64) -> f64 {
    let (kx, ky) = mode.wavenumbers(plate);
    (kx * x).sin() * (ky * y).sin()
}

/// `∫_{lo}^{hi} sin²(k t) dt`.
fn sin2_integral(k: f64, lo: f64, hi: f64) -> f64 {
    let anti = |t: f64| t / 2.0 - (2.0 * k * t).sin() / (4.0 * k);
    anti(hi) - anti(lo)
}

pub fn modal_coefficients(plate: &PlateSpec, mode: ModeIndex, patch: &ContactPatch) -> Result<ModalCoefficients> {
    plate.validate_allow_undamped()?;
    patch.validate(plate)?;
    let (kx, ky) = mode.wavenumbers(plate);
    let c2 = plate.area() / 4.0;
    let c1 = (kx * kx + ky * ky).powi(2) * c2;
    // Clip to the plate so edge round-off cannot push C3 past C2.
    let (x0, x1) = patch.x_range();
    let (y0, y1) = patch.y_range();
    let ix = sin2_integral(kx, x0.max(0.0), x1.min(plate.length_a));
    let iy = sin2_integral(ky, y0.max(0.0), y1.min(plate.width_b));
    let c3 = (ix * iy).clamp(0.0, c2);
    Ok(ModalCoefficients { c1, c2, c3 })
}

/// Undamped natural frequency of the bare plate, Hz.
pub fn natural_frequency(plate: &PlateSpec, mode: ModeIndex) -> Result<f64> {
    plate.validate_allow_undamped()?;
    let (kx, ky) = mode.wavenumbers(plate);
    Ok((plate.bending_rigidity() / plate.area_density_mu).sqrt() * (kx * kx + ky * ky) / (2.0 * PI))
}

/// Single-mode resonance with the body inertia included,
/// `sqrt(D C1 / (μ C2 + m0 C3 / S)) / 2π`, Hz.
pub fn loaded_natural_frequency(plate: &PlateSpec, mode: ModeIndex, load: &BodyLoad) -> Result<f64> {
    load.validate(plate)?;
    let c = modal_coefficients(plate, mode, &load.patch)?;
    let inertia = plate.area_density_mu * c.c2 + load.mass_m0 / load.patch.area() * c.c3;
    Ok((plate.bending_rigidity() * c.c1 / inertia).sqrt() / (2.0 * PI))
}

/// All modes up to `mode_cap` per axis, sorted by natural frequency.
pub fn modes_by_frequency(plate: &PlateSpec, mode_cap: u32) -> Result<Vec<(ModeIndex, f64)>> {
    let mut out = Vec::new();
    for m in 1..=mode_cap {
        for n in 1..=mode_cap {
            let mode = ModeIndex { m, n };
            out.push((mode, natural_frequency(plate, mode)?));
        }
    }
    out.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct ModeTerm {
    coupling: f64,
    coeffs: ModalCoefficients,
}

/// Plate + load + source/sensor pair with the per-mode projections cached,
/// for repeated evaluation over many frequencies.
#[derive(Debug, Clone)]
pub struct ModalSystem {
    plate: PlateSpec,
    rigidity: f64,
    mass: f64,
    patch_area: f64,
    terms: Vec<ModeTerm>,
}

impl ModalSystem {
    pub fn new(plate: &PlateSpec, load: &BodyLoad, source: Point, sensor: Point, mode_cap: u32) -> Result<Self> {
        plate.validate_allow_undamped()?;
        load.validate(plate)?;
        plate.check_point(source, "source")?;
        plate.check_point(sensor, "sensor")?;
        if mode_cap == 0 {
            return Err(Error::InvalidInput("mode_cap must be at least 1".into()));
        }
        let mut terms = Vec::with_capacity((mode_cap * mode_cap) as usize);
        for m in 1..=mode_cap {
            for n in 1..=mode_cap {
                let mode = ModeIndex { m, n };
                let coupling = mode_shape_unchecked(plate, mode, source.x, source.y)
                    * mode_shape_unchecked(plate, mode, sensor.x, sensor.y);
                let coeffs = modal_coefficients(plate, mode, &load.patch)?;
                terms.push(ModeTerm { coupling, coeffs });
            }
        }
        Ok(ModalSystem {
            plate: *plate,
            rigidity: plate.bending_rigidity(),
            mass: load.mass_m0,
            patch_area: load.patch.area(),
            terms,
        })
    }

    /// Sensor velocity per unit source force at `freq_hz` (modal sum form).
    pub fn velocity_per_force(&self, freq_hz: f64) -> Result<Complex64> {
        let w = 2.0 * PI * freq_hz;
        if w == 0.0 {
            return Ok(Complex64::new(0.0, 0.0));
        }
        let mu = self.plate.area_density_mu;
        let damp = self.plate.damping_omega_b;
        let mut sum = Complex64::new(0.0, 0.0);
        for t in &self.terms {
            let c = t.coeffs;
            let den = Complex64::new(
                -w * w * (mu * c.c2 + self.mass / self.patch_area * c.c3) + self.rigidity * c.c1,
                2.0 * w * mu * damp * c.c2,
            );
            if den.norm() <= RESONANCE_RTOL * self.rigidity * c.c1 {
                return Err(Error::NonFinite {
                    what: format!("undamped resonance at {freq_hz} Hz"),
                });
            }
            sum += Complex64::new(0.0, w * t.coupling) / den;
        }
        finite(sum, freq_hz)
    }

    /// `(Σ A/(m0 + B), Σ A/(m0 + B)²)` in the mass-pole form.
    pub fn mass_pole_sums(&self, freq_hz: f64) -> Result<(Complex64, Complex64)> {
        let w = 2.0 * PI * freq_hz;
        let zero = Complex64::new(0.0, 0.0);
        if w == 0.0 {
            return Ok((zero, zero));
        }
        let mu = self.plate.area_density_mu;
        let damp = self.plate.damping_omega_b;
        let s = self.patch_area;
        let (mut h, mut dh) = (zero, zero);
        for t in &self.terms {
            let c = t.coeffs;
            let a = t.coupling * s / (-w * c.c3);
            let b = Complex64::new(self.rigidity * c.c1 - w * w * mu * c.c2, 2.0 * w * mu * damp * c.c2)
                * (-s / (w * w * c.c3));
            let pole = b + self.mass;
            if pole.norm() <= RESONANCE_RTOL * b.norm() {
                return Err(Error::NonFinite {
                    what: format!("undamped resonance at {freq_hz} Hz"),
                });
            }
            h += a / pole;
            dh += a / (pole * pole);
        }
        Ok((finite(h, freq_hz)?, finite(dh, freq_hz)?))
    }
}

fn finite(v: Complex64, freq_hz: f64) -> Result<Complex64> {
    if v.re.is_finite() && v.im.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite {
            what: format!("modal sum at {freq_hz} Hz"),
        })
    }
}

/// Velocity response at `sensor` to a point force at `source` with the
/// given spectrum; the output shares the excitation's grid.
pub fn modal_response(
    plate: &PlateSpec,
    load: &BodyLoad,
    excitation: &ComplexSpectrum,
    source: Point,
    sensor: Point,
    mode_cap: u32,
) -> Result<ComplexSpectrum> {
    let sys = ModalSystem::new(plate, load, source, sensor, mode_cap)?;
    let values = excitation
        .freq_hz
        .iter()
        .zip(&excitation.values)
        .map(|(&f, &x)| Ok(sys.velocity_per_force(f)? * x))
        .collect::<Result<Vec<_>>>()?;
    Ok(ComplexSpectrum {
        freq_hz: excitation.freq_hz.clone(),
        values,
    })
}

/// Complex transfer `Σ A_mn / (m0 + B_mn)` on `freq_grid`.
pub fn theoretical_transfer_complex(
    plate: &PlateSpec,
    load: &BodyLoad,
    source: Point,
    sensor: Point,
    freq_grid: &[f64],
    mode_cap: u32,
) -> Result<Vec<Complex64>> {
    check_grid(freq_grid)?;
    let sys = ModalSystem::new(plate, load, source, sensor, mode_cap)?;
    freq_grid.iter().map(|&f| Ok(sys.mass_pole_sums(f)?.0)).collect()
}

/// Transfer magnitude `|X2 / X1| = |Σ A_mn / (m0 + B_mn)|`.
pub fn theoretical_transfer(
    plate: &PlateSpec,
    load: &BodyLoad,
    source: Point,
    sensor: Point,
    freq_grid: &[f64],
    mode_cap: u32,
) -> Result<Vec<f64>> {
    Ok(
        theoretical_transfer_complex(plate, load, source, sensor, freq_grid, mode_cap)?
            .into_iter()
            .map(|h| h.norm())
            .collect(),
    )
}

/// Weight sensitivity `|dH/dm0| = |Σ A_mn / (m0 + B_mn)²|`.
pub fn weight_sensitivity(
    plate: &PlateSpec,
    load: &BodyLoad,
    source: Point,
    sensor: Point,
    freq_grid: &[f64],
    mode_cap: u32,
) -> Result<Vec<f64>> {
    check_grid(freq_grid)?;
    let sys = ModalSystem::new(plate, load, source, sensor, mode_cap)?;
    freq_grid.iter().map(|&f| Ok(sys.mass_pole_sums(f)?.1.norm())).collect()
}
