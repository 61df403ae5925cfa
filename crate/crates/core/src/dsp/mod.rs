//! Time series, Welch spectra, transfer-function estimation and the
//! band-energy utilities used to pick and validate excitations.

mod io;
mod synth;
mod welch;

pub use io::{read_text, read_wav, write_text, write_wav, WavSampleFormat};
pub use synth::{synth_chirp, synth_excitation};
pub use welch::{transfer_estimate, welch_csd, welch_psd, PowerSpectrum, TransferEstimate, Welch};

use std::sync::Arc;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use realfft::{ComplexToReal, RealFftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniformly sampled real signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    rate_hz: f64,
    samples: Vec<f64>,
}

impl TimeSeries {
    pub fn new(rate_hz: f64, samples: Vec<f64>) -> Result<Self> {
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sample rate must be positive, got {rate_hz}"
            )));
        }
        if samples.is_empty() {
            return Err(Error::InvalidInput("time series must not be empty".into()));
        }
        Ok(TimeSeries { rate_hz, samples })
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz
    }

    pub fn nyquist_hz(&self) -> f64 {
        self.rate_hz / 2.0
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn rms(&self) -> f64 {
        (self.energy() / self.samples.len() as f64).sqrt()
    }

    pub fn scaled(&self, gain: f64) -> TimeSeries {
        TimeSeries {
            rate_hz: self.rate_hz,
            samples: self.samples.iter().map(|s| s * gain).collect(),
        }
    }

    /// Samples `[start, start + len)` as a new series.
    pub fn slice(&self, start: usize, len: usize) -> Result<TimeSeries> {
        if len == 0 || start + len > self.samples.len() {
            return Err(Error::InvalidInput(format!(
                "slice [{start}, {}) outside series of length {}",
                start + len,
                self.samples.len()
            )));
        }
        TimeSeries::new(self.rate_hz, self.samples[start..start + len].to_vec())
    }
}

/// Half-open frequency interval `[lo_hz, hi_hz)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyBand {
    pub lo_hz: f64,
    pub hi_hz: f64,
}

impl FrequencyBand {
    pub fn new(lo_hz: f64, hi_hz: f64) -> Result<Self> {
        let band = FrequencyBand { lo_hz, hi_hz };
        band.validate()?;
        Ok(band)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo_hz.is_finite() && self.hi_hz.is_finite() && self.lo_hz >= 0.0 && self.lo_hz < self.hi_hz) {
            return Err(Error::InvalidInput(format!(
                "frequency band needs 0 <= lo < hi, got [{}, {})",
                self.lo_hz, self.hi_hz
            )));
        }
        Ok(())
    }

    pub fn validate_for_rate(&self, rate_hz: f64) -> Result<()> {
        self.validate()?;
        if self.hi_hz > rate_hz / 2.0 {
            return Err(Error::InvalidInput(format!(
                "band upper edge {} Hz exceeds Nyquist {} Hz",
                self.hi_hz,
                rate_hz / 2.0
            )));
        }
        Ok(())
    }

    pub fn contains(&self, f: f64) -> bool {
        f >= self.lo_hz && f < self.hi_hz
    }

    pub fn width(&self) -> f64 {
        self.hi_hz - self.lo_hz
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo_hz + self.hi_hz)
    }

    /// Same-width band shifted by `offset_hz`.
    pub fn shifted(&self, offset_hz: f64) -> Result<FrequencyBand> {
        FrequencyBand::new(self.lo_hz + offset_hz, self.hi_hz + offset_hz)
    }
}

impl std::fmt::Display for FrequencyBand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{} Hz", self.lo_hz, self.hi_hz)
    }
}

/// Taper applied to each Welch segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    /// Periodic (DFT-even) coefficients of length `n`.
    pub fn coefficients(&self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
        }
    }
}

impl std::str::FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hann" => Ok(Window::Hann),
            "rectangular" | "boxcar" => Ok(Window::Rectangular),
            other => Err(Error::InvalidInput(format!("unknown window `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchConfig {
    pub segment_len: usize,
    pub overlap_fraction: f64,
    pub window: Window,
}

impl Default for WelchConfig {
    /// 8192-sample Hann segments with 50 % overlap (3.125 Hz bins at 25.6 kHz).
    fn default() -> Self {
        WelchConfig {
            segment_len: 8192,
            overlap_fraction: 0.5,
            window: Window::Hann,
        }
    }
}

impl WelchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.segment_len < 2 {
            return Err(Error::InvalidInput("Welch segment length must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::InvalidInput(format!(
                "Welch overlap must lie in [0, 1), got {}",
                self.overlap_fraction
            )));
        }
        Ok(())
    }

    pub fn hop(&self) -> usize {
        let overlap = (self.overlap_fraction * self.segment_len as f64).round() as usize;
        (self.segment_len - overlap).max(1)
    }

    pub fn bin_width(&self, rate_hz: f64) -> f64 {
        rate_hz / self.segment_len as f64
    }

    /// Bin centre frequencies `k · rate / segment_len` for `k = 0..=N/2`.
    pub fn frequencies(&self, rate_hz: f64) -> Vec<f64> {
        let df = self.bin_width(rate_hz);
        (0..=self.segment_len / 2).map(|k| k as f64 * df).collect()
    }

    /// Bins whose centre frequency lies in `band`.
    pub fn band_bins(&self, rate_hz: f64, band: &FrequencyBand) -> Vec<usize> {
        self.frequencies(rate_hz)
            .iter()
            .enumerate()
            .filter(|(_, f)| band.contains(**f))
            .map(|(k, _)| k)
            .collect()
    }
}

/// One-sided rectangular periodogram of the whole series, scaled so the bins
/// sum to the mean-square value. Returns `(bin width, per-bin power)`.
fn periodogram(x: &TimeSeries) -> (f64, Vec<f64>) {
    let n = x.len();
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut input = x.samples.clone();
    let mut spec = fft.make_output_vec();
    fft.process(&mut input, &mut spec)
        .expect("buffer sizes come from the plan");
    let norm = 1.0 / (n as f64 * n as f64);
    let power = spec
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let edge = k == 0 || (n.is_multiple_of(2) && k == n / 2);
            c.norm_sqr() * norm * if edge { 1.0 } else { 2.0 }
        })
        .collect();
    (x.rate_hz / n as f64, power)
}

/// Mean-square power of `x` inside `band` (integral of its one-sided
/// spectrum over the band). Summed over a partition of `[0, Nyquist]` it
/// reproduces the signal's mean square exactly.
pub fn band_energy(x: &TimeSeries, band: &FrequencyBand) -> Result<f64> {
    band.validate_for_rate(x.rate_hz)?;
    let (df, power) = periodogram(x);
    Ok(sum_band(&power, df, band))
}

fn sum_band(power: &[f64], df: f64, band: &FrequencyBand) -> f64 {
    power
        .iter()
        .enumerate()
        .filter(|(k, _)| band.contains(*k as f64 * df))
        .map(|(_, p)| p)
        .sum()
}

/// Energies of overlapping bands `[0, w), [hop, hop + w), …` up to `fmax_hz`,
/// ordered by lower edge.
pub fn sliding_band_energies(
    x: &TimeSeries,
    width_hz: f64,
    hop_hz: f64,
    fmax_hz: f64,
) -> Result<Vec<(FrequencyBand, f64)>> {
    if !(width_hz > 0.0 && hop_hz > 0.0 && fmax_hz >= width_hz) {
        return Err(Error::InvalidInput(format!(
            "sliding bands need width > 0, hop > 0 and fmax >= width (got {width_hz}, {hop_hz}, {fmax_hz})"
        )));
    }
    if fmax_hz > x.nyquist_hz() {
        return Err(Error::InvalidInput(format!(
            "fmax {fmax_hz} Hz exceeds Nyquist {} Hz",
            x.nyquist_hz()
        )));
    }
    let count = ((fmax_hz - width_hz) / hop_hz + 1e-9).floor() as usize + 1;
    let (df, power) = periodogram(x);
    (0..count)
        .map(|i| {
            let lo = i as f64 * hop_hz;
            let band = FrequencyBand::new(lo, lo + width_hz)?;
            Ok((band, sum_band(&power, df, &band)))
        })
        .collect()
}

/// `10·log10(Σ s² / Σ n²)`.
pub fn snr_db(signal: &TimeSeries, noise: &TimeSeries) -> Result<f64> {
    let en = noise.energy();
    if en <= 0.0 {
        return Err(Error::InvalidInput("noise series has zero energy".into()));
    }
    Ok(10.0 * (signal.energy() / en).log10())
}

/// Adds zero-mean Gaussian noise with standard deviation `pct / 100 × RMS(x)`.
pub fn add_gaussian_noise(x: &TimeSeries, pct: f64, seed: u64) -> Result<TimeSeries> {
    if !(pct.is_finite() && pct >= 0.0) {
        return Err(Error::InvalidInput(format!("noise percentage must be >= 0, got {pct}")));
    }
    let sigma = pct / 100.0 * x.rms();
    Ok(TimeSeries {
        rate_hz: x.rate_hz,
        samples: with_gaussian_noise(&x.samples, sigma, seed),
    })
}

pub(crate) fn with_gaussian_noise(samples: &[f64], sigma: f64, seed: u64) -> Vec<f64> {
    if sigma == 0.0 {
        return samples.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples
        .iter()
        .map(|s| {
            let z: f64 = StandardNormal.sample(&mut rng);
            s + sigma * z
        })
        .collect()
}

/// Spectrum of one input record, cached for driving several linear systems.
/// Outputs are the periodic steady state: each rFFT bin is multiplied by the
/// system response at its frequency and transformed back (circular
/// convolution over the record).
#[derive(Clone)]
pub struct SpectralDriver {
    rate_hz: f64,
    len: usize,
    spectrum: Vec<Complex64>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl SpectralDriver {
    pub fn new(x: &TimeSeries) -> Self {
        let n = x.len();
        let mut planner = RealFftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(n);
        let mut input = x.samples.clone();
        let mut spectrum = forward.make_output_vec();
        forward
            .process(&mut input, &mut spectrum)
            .expect("buffer sizes come from the plan");
        SpectralDriver {
            rate_hz: x.rate_hz,
            len: n,
            spectrum,
            inverse: planner.plan_fft_inverse(n),
        }
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Bin frequencies of the cached spectrum.
    pub fn frequencies(&self) -> Vec<f64> {
        let df = self.rate_hz / self.len as f64;
        (0..self.spectrum.len()).map(|k| k as f64 * df).collect()
    }

    /// Output of the system with response `h`, given per bin in
    /// [`frequencies`](Self::frequencies) order.
    pub fn drive_with(&self, response: &[Complex64]) -> Result<TimeSeries> {
        if response.len() != self.spectrum.len() {
            return Err(Error::WidthMismatch {
                expected: self.spectrum.len(),
                actual: response.len(),
            });
        }
        let mut spec: Vec<Complex64> = self.spectrum.iter().zip(response).map(|(x, h)| x * h).collect();
        // The inverse transform needs real DC and (even n) Nyquist bins.
        spec[0].im = 0.0;
        if self.len.is_multiple_of(2) {
            spec[self.len / 2].im = 0.0;
        }
        let mut out = self.inverse.make_output_vec();
        self.inverse
            .process(&mut spec, &mut out)
            .expect("buffer sizes come from the plan");
        let scale = 1.0 / self.len as f64;
        out.iter_mut().for_each(|v| *v *= scale);
        TimeSeries::new(self.rate_hz, out)
    }

    pub fn drive(&self, h: impl FnMut(f64) -> Result<Complex64>) -> Result<TimeSeries> {
        let response = self.frequencies().into_iter().map(h).collect::<Result<Vec<_>>>()?;
        self.drive_with(&response)
    }
}

/// One-shot [`SpectralDriver::drive`].
pub fn apply_frequency_response(x: &TimeSeries, h: impl FnMut(f64) -> Result<Complex64>) -> Result<TimeSeries> {
    SpectralDriver::new(x).drive(h)
}

/// Window picked by [`select_segment`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentChoice {
    pub offset_samples: usize,
    pub offset_s: f64,
    pub band_energy: f64,
}

/// Energies closer than this relative margin count as ties (earliest wins).
const SEGMENT_TIE_RTOL: f64 = 1e-9;

/// Start of the `seg_len_s` window (stepped by `hop_s`) with the highest
/// in-band energy; ties go to the earliest offset.
pub fn select_segment(x: &TimeSeries, band: &FrequencyBand, seg_len_s: f64, hop_s: f64) -> Result<SegmentChoice> {
    band.validate_for_rate(x.rate_hz)?;
    let seg = (seg_len_s * x.rate_hz).round() as usize;
    let hop = (hop_s * x.rate_hz).round() as usize;
    if seg == 0 || hop == 0 {
        return Err(Error::InvalidInput("segment length and hop must be positive".into()));
    }
    if x.len() < seg {
        return Err(Error::InvalidInput(format!(
            "series of {:.3} s is shorter than the {seg_len_s} s segment",
            x.duration_s()
        )));
    }
    let offsets: Vec<usize> = (0..=(x.len() - seg) / hop).map(|i| i * hop).collect();
    let energies = crate::par::try_map(&offsets, |&off| band_energy(&x.slice(off, seg)?, band))?;
    let mut best = 0;
    for (i, e) in energies.iter().enumerate().skip(1) {
        if *e > energies[best] * (1.0 + SEGMENT_TIE_RTOL) {
            best = i;
        }
    }
    Ok(SegmentChoice {
        offset_samples: offsets[best],
        offset_s: offsets[best] as f64 / x.rate_hz,
        band_energy: energies[best],
    })
}
