//! Weight-sensitive band identification from a chirp response, and checks
//! that a band captures the plate's mass sensitivity.

use serde::{Deserialize, Serialize};

use crate::dsp::{apply_frequency_response, synth_chirp, welch_psd, FrequencyBand, TimeSeries, WelchConfig};
use crate::error::{Error, Result};
use crate::plate::{BodyLoad, ContactPatch, ModalSystem, PlateSpec, Point};

pub const DEFAULT_COVERAGE: f64 = 0.8;
/// A spectrum whose peak is less than this power ratio above its median is flat (3 dB).
const PEAK_OVER_MEDIAN: f64 = 1.995_262_314_968_879_6;
/// Local peaks at or above this fraction of the global maximum are reported.
const PEAK_REPORT_FRACTION: f64 = 0.5;
/// `validate_band` passes when the in-band sensitivity share reaches this.
pub const SENSITIVITY_PASS_FRACTION: f64 = 0.5;
const SCAN_STEP_HZ: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub band: FrequencyBand,
    /// Local PSD maxima at or above half the global maximum, ascending.
    pub peak_freqs: Vec<f64>,
    /// Share of DC-excluded PSD energy inside `band`.
    pub energy_fraction: f64,
    pub coverage: f64,
}

/// Smallest contiguous run of PSD bins that contains the global peak and at
/// least `coverage` of the DC-excluded energy. The band spans the selected
/// bin centres `[f_lo, f_hi + df)`, capped at Nyquist.
pub fn identify_band(response: &TimeSeries, cfg: &WelchConfig, coverage: f64) -> Result<BandReport> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "coverage must lie in (0, 1], got {coverage}"
        )));
    }
    let psd = welch_psd(response, cfg)?;
    let f = &psd.freq_hz;
    let p = &psd.density;
    if p.len() < 3 {
        return Err(Error::NoBandFound("spectrum has fewer than three bins".into()));
    }
    let mut peak = 1;
    for k in 2..p.len() {
        if p[k] > p[peak] {
            peak = k;
        }
    }
    let mut sorted: Vec<f64> = p[1..].to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    if !(p[peak] > 0.0 && p[peak] >= PEAK_OVER_MEDIAN * median) {
        return Err(Error::NoBandFound(format!(
            "spectral peak {:.3e} is not 3 dB above the median {median:.3e}",
            p[peak]
        )));
    }

    let total: f64 = p[1..].iter().sum();
    let target = coverage * total * (1.0 - 1e-12);
    // Two pointers: the smallest admissible `hi` never decreases as `lo` grows.
    let mut best: Option<(usize, usize)> = None;
    let mut hi = peak;
    let mut sum: f64 = p[1..=peak].iter().sum();
    for lo in 1..=peak {
        if lo > 1 {
            sum -= p[lo - 1];
        }
        while sum < target && hi + 1 < p.len() {
            hi += 1;
            sum += p[hi];
        }
        if sum < target {
            break;
        }
        if best.is_none_or(|(bl, bh)| hi - lo < bh - bl) {
            best = Some((lo, hi));
        }
    }
    let (lo, hi) = best.ok_or_else(|| Error::NoBandFound("coverage target unreachable".into()))?;
    let df = psd.bin_width();
    let nyquist = response.nyquist_hz();
    let band = FrequencyBand::new(f[lo], (f[hi] + df).min(nyquist))?;
    let energy_fraction = p[lo..=hi].iter().sum::<f64>() / total;

    let floor = PEAK_REPORT_FRACTION * p[peak];
    let peak_freqs = (1..p.len())
        .filter(|&k| {
            let left = p[k - 1];
            let right = if k + 1 < p.len() { p[k + 1] } else { f64::NEG_INFINITY };
            p[k] >= floor && p[k] > left && p[k] >= right
        })
        .map(|k| f[k])
        .collect();

    Ok(BandReport {
        band,
        peak_freqs,
        energy_fraction,
        coverage,
    })
}

/// Source, sensor and contact patch through which a plate is probed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub source: Point,
    pub sensor: Point,
    pub patch: ContactPatch,
    pub mode_cap: u32,
}

impl Probe {
    pub fn system(&self, plate: &PlateSpec, mass_kg: f64) -> Result<ModalSystem> {
        ModalSystem::new(
            plate,
            &BodyLoad::new(mass_kg, self.patch),
            self.source,
            self.sensor,
            self.mode_cap,
        )
    }
}

/// Chirp used to identify the band: `[f0, f1]` over `duration_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChirpConfig {
    pub f0_hz: f64,
    pub f1_hz: f64,
    pub duration_s: f64,
    pub rate_hz: f64,
}

impl Default for ChirpConfig {
    /// 10 Hz to 1 kHz over one second, sampled at 25.6 kHz.
    fn default() -> Self {
        ChirpConfig {
            f0_hz: 10.0,
            f1_hz: 1000.0,
            duration_s: 1.0,
            rate_hz: 25_600.0,
        }
    }
}

impl ChirpConfig {
    pub fn synth(&self) -> Result<TimeSeries> {
        synth_chirp(self.f0_hz, self.f1_hz, self.duration_s, self.rate_hz)
    }

    /// The swept range as a band (upper edge included by a hair).
    pub fn range(&self) -> Result<FrequencyBand> {
        let (lo, hi) = (self.f0_hz.min(self.f1_hz), self.f0_hz.max(self.f1_hz));
        FrequencyBand::new(lo, hi + SCAN_STEP_HZ * 1e-6)
    }
}

/// Sensor velocity of `plate` under the chirp, with `mass_kg` on the probe patch.
pub fn chirp_response(plate: &PlateSpec, probe: &Probe, mass_kg: f64, chirp: &ChirpConfig) -> Result<TimeSeries> {
    let sys = probe.system(plate, mass_kg)?;
    apply_frequency_response(&chirp.synth()?, |f| sys.velocity_per_force(f))
}

/// Uniform scan grid over `range` at `SCAN_STEP_HZ`, skipping DC.
fn scan_grid(range: &FrequencyBand) -> Vec<f64> {
    let start = (range.lo_hz / SCAN_STEP_HZ).ceil().max(1.0) as usize;
    (start..)
        .map(|k| k as f64 * SCAN_STEP_HZ)
        .take_while(|f| range.contains(*f))
        .collect()
}

/// Sensitivity `|dH/dm0|` on a fine grid over `range`.
pub fn sensitivity_scan(
    plate: &PlateSpec,
    probe: &Probe,
    mass_kg: f64,
    range: &FrequencyBand,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let sys = probe.system(plate, mass_kg)?;
    let grid = scan_grid(range);
    let s = grid
        .iter()
        .map(|&f| Ok(sys.mass_pole_sums(f)?.1.norm()))
        .collect::<Result<Vec<_>>>()?;
    Ok((grid, s))
}

/// Frequency of maximum sensitivity inside `range`.
pub fn sensitivity_peak(plate: &PlateSpec, probe: &Probe, mass_kg: f64, range: &FrequencyBand) -> Result<f64> {
    let (grid, s) = sensitivity_scan(plate, probe, mass_kg, range)?;
    let k = s
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .ok_or_else(|| Error::InvalidInput(format!("scan range {range} has no grid points")))?;
    Ok(grid[k])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandValidation {
    pub band: FrequencyBand,
    /// `(mass_kg, in-band share of integrated sensitivity)` per load.
    pub per_load: Vec<(f64, f64)>,
    pub mean_fraction: f64,
    pub passed: bool,
}

/// Share of integrated sensitivity over `range` that falls in `band`,
/// averaged over `load_grid`.
pub fn validate_band(
    plate: &PlateSpec,
    probe: &Probe,
    load_grid: &[f64],
    band: &FrequencyBand,
    range: &FrequencyBand,
) -> Result<BandValidation> {
    band.validate()?;
    if load_grid.is_empty() {
        return Err(Error::InvalidInput("load grid must not be empty".into()));
    }
    let per_load = crate::par::try_map(load_grid, |&m| {
        let (grid, s) = sensitivity_scan(plate, probe, m, range)?;
        let total: f64 = s.iter().sum();
        let inside: f64 = grid
            .iter()
            .zip(&s)
            .filter(|(f, _)| band.contains(**f))
            .map(|(_, v)| v)
            .sum();
        Ok((m, if total > 0.0 { inside / total } else { 0.0 }))
    })?;
    let mean_fraction = per_load.iter().map(|(_, v)| v).sum::<f64>() / per_load.len() as f64;
    Ok(BandValidation {
        band: *band,
        per_load,
        mean_fraction,
        passed: mean_fraction >= SENSITIVITY_PASS_FRACTION,
    })
}
