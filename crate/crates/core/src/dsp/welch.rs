use std::sync::Arc;

use num_complex::Complex64;
use realfft::{RealFftPlanner, RealToComplex};
use serde::{Deserialize, Serialize};

use super::{FrequencyBand, TimeSeries, WelchConfig};
use crate::error::{Error, Result};
use crate::plate::ComplexSpectrum;

/// Fraction of the peak input PSD below which a transfer bin is invalid.
pub const PSD_FLOOR_RTOL: f64 = 1e-12;

/// One-sided power spectral density (units²/Hz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSpectrum {
    pub freq_hz: Vec<f64>,
    pub density: Vec<f64>,
}

impl PowerSpectrum {
    pub fn bin_width(&self) -> f64 {
        if self.freq_hz.len() > 1 {
            self.freq_hz[1] - self.freq_hz[0]
        } else {
            0.0
        }
    }

    /// `∫ PSD df` over the bins whose centre lies in `band`.
    pub fn integrate(&self, band: &FrequencyBand) -> f64 {
        let df = self.bin_width();
        self.freq_hz
            .iter()
            .zip(&self.density)
            .filter(|(f, _)| band.contains(**f))
            .map(|(_, p)| p * df)
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width()
    }
}

/// Welch transfer-function estimate `H21 = Pxy / Pxx` (the H1 estimator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferEstimate {
    pub freq_hz: Vec<f64>,
    /// Zero where `valid` is false.
    pub h21: Vec<Complex64>,
    pub valid: Vec<bool>,
    pub pxx: Vec<f64>,
    pub pxy: Vec<Complex64>,
}

impl TransferEstimate {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.h21.iter().map(|h| h.norm()).collect()
    }
}

/// Reusable Welch estimator for one segment length and sample rate.
pub struct Welch {
    cfg: WelchConfig,
    rate_hz: f64,
    window: Vec<f64>,
    fft: Arc<dyn RealToComplex<f64>>,
    /// `1 / (fs Σ w²)`.
    density_scale: f64,
}

impl Welch {
    pub fn new(cfg: WelchConfig, rate_hz: f64) -> Result<Self> {
        cfg.validate()?;
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::InvalidInput(format!(
                "sample rate must be positive, got {rate_hz}"
            )));
        }
        let window = cfg.window.coefficients(cfg.segment_len);
        let wss: f64 = window.iter().map(|w| w * w).sum();
        let fft = RealFftPlanner::<f64>::new().plan_fft_forward(cfg.segment_len);
        Ok(Welch {
            cfg,
            rate_hz,
            window,
            fft,
            density_scale: 1.0 / (rate_hz * wss),
        })
    }

    pub fn config(&self) -> &WelchConfig {
        &self.cfg
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.cfg.frequencies(self.rate_hz)
    }

    fn check_series(&self, x: &TimeSeries) -> Result<()> {
        if x.rate_hz() != self.rate_hz {
            return Err(Error::InvalidInput(format!(
                "series sampled at {} Hz, estimator built for {} Hz",
                x.rate_hz(),
                self.rate_hz
            )));
        }
        if x.len() < self.cfg.segment_len {
            return Err(Error::InvalidInput(format!(
                "segment length {} exceeds series length {}",
                self.cfg.segment_len,
                x.len()
            )));
        }
        Ok(())
    }

    fn segment_starts(&self, len: usize) -> impl Iterator<Item = usize> {
        let hop = self.cfg.hop();
        let count = (len - self.cfg.segment_len) / hop + 1;
        (0..count).map(move |i| i * hop)
    }

    fn spectrum_of(&self, data: &[f64], buf: &mut Vec<f64>, out: &mut [Complex64]) {
        buf.clear();
        buf.extend(data.iter().zip(&self.window).map(|(x, w)| x * w));
        self.fft.process(buf, out).expect("buffer sizes come from the plan");
    }

    fn one_sided_factor(&self, k: usize) -> f64 {
        let n = self.cfg.segment_len;
        if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
            1.0
        } else {
            2.0
        }
    }

    /// Averages `Pxx` and `Pxy = E[conj(X)·Y]` over segments in one pass.
    fn accumulate(&self, x: &[f64], y: Option<&[f64]>) -> (Vec<f64>, Vec<Complex64>) {
        let nb = self.cfg.segment_len / 2 + 1;
        let mut pxx = vec![0.0; nb];
        let mut pxy = vec![Complex64::new(0.0, 0.0); nb];
        let mut buf = Vec::with_capacity(self.cfg.segment_len);
        let mut sx = self.fft.make_output_vec();
        let mut sy = self.fft.make_output_vec();
        let mut count = 0usize;
        for start in self.segment_starts(x.len()) {
            let end = start + self.cfg.segment_len;
            self.spectrum_of(&x[start..end], &mut buf, &mut sx);
            match y {
                Some(y) => {
                    self.spectrum_of(&y[start..end], &mut buf, &mut sy);
                    for k in 0..nb {
                        pxx[k] += sx[k].norm_sqr();
                        pxy[k] += sx[k].conj() * sy[k];
                    }
                }
                None => {
                    for k in 0..nb {
                        pxx[k] += sx[k].norm_sqr();
                    }
                }
            }
            count += 1;
        }
        for k in 0..nb {
            let s = self.density_scale * self.one_sided_factor(k) / count as f64;
            pxx[k] *= s;
            pxy[k] *= s;
        }
        (pxx, pxy)
    }

    pub fn psd(&self, x: &TimeSeries) -> Result<PowerSpectrum> {
        self.check_series(x)?;
        let (density, _) = self.accumulate(x.samples(), None);
        Ok(PowerSpectrum {
            freq_hz: self.frequencies(),
            density,
        })
    }

    pub fn csd(&self, x: &TimeSeries, y: &TimeSeries) -> Result<ComplexSpectrum> {
        self.check_pair(x, y)?;
        let (_, pxy) = self.accumulate(x.samples(), Some(y.samples()));
        ComplexSpectrum::new(self.frequencies(), pxy)
    }

    fn check_pair(&self, x: &TimeSeries, y: &TimeSeries) -> Result<()> {
        self.check_series(x)?;
        self.check_series(y)?;
        if x.len() != y.len() {
            return Err(Error::InvalidInput(format!(
                "series lengths differ ({} vs {})",
                x.len(),
                y.len()
            )));
        }
        Ok(())
    }

    /// `H21 = Pxy / Pxx` with bins below `PSD_FLOOR_RTOL × max Pxx` flagged invalid.
    pub fn transfer(&self, input: &TimeSeries, output: &TimeSeries) -> Result<TransferEstimate> {
        self.check_pair(input, output)?;
        let (pxx, pxy) = self.accumulate(input.samples(), Some(output.samples()));
        let peak = pxx.iter().copied().fold(0.0, f64::max);
        let floor = PSD_FLOOR_RTOL * peak;
        let valid: Vec<bool> = pxx.iter().map(|&p| peak > 0.0 && p > floor).collect();
        if !valid.iter().any(|&v| v) {
            return Err(Error::AllBinsInvalid);
        }
        let h21 = pxx
            .iter()
            .zip(&pxy)
            .zip(&valid)
            .map(|((&p, &c), &ok)| if ok { c / p } else { Complex64::new(0.0, 0.0) })
            .collect();
        Ok(TransferEstimate {
            freq_hz: self.frequencies(),
            h21,
            valid,
            pxx,
            pxy,
        })
    }
}

/// Welch power spectral density of `x`.
pub fn welch_psd(x: &TimeSeries, cfg: &WelchConfig) -> Result<PowerSpectrum> {
    Welch::new(*cfg, x.rate_hz())?.psd(x)
}

/// Welch cross-spectral density `E[conj(X)·Y]`.
pub fn welch_csd(x: &TimeSeries, y: &TimeSeries, cfg: &WelchConfig) -> Result<ComplexSpectrum> {
    if x.rate_hz() != y.rate_hz() {
        return Err(Error::InvalidInput("cross-spectrum needs equal sample rates".into()));
    }
    Welch::new(*cfg, x.rate_hz())?.csd(x, y)
}

/// Empirical transfer function from `input` (near sensor) to `output`.
pub fn transfer_estimate(input: &TimeSeries, output: &TimeSeries, cfg: &WelchConfig) -> Result<TransferEstimate> {
    if input.rate_hz() != output.rate_hz() {
        return Err(Error::InvalidInput("transfer estimate needs equal sample rates".into()));
    }
    Welch::new(*cfg, input.rate_hz())?.transfer(input, output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{add_gaussian_noise, Window};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    fn noise(n: usize, seed: u64, rate: f64) -> TimeSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TimeSeries::new(
            rate,
            (0..n).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>(),
        )
        .unwrap()
    }

    fn small_cfg() -> WelchConfig {
        WelchConfig {
            segment_len: 256,
            overlap_fraction: 0.5,
            window: Window::Hann,
        }
    }

    #[test]
    fn sinusoid_peak_and_parseval() {
        let rate = 1024.0;
        let cfg = small_cfg();
        // Bin 32 of a 256-point segment.
        let f0 = 32.0 * rate / 256.0;
        let x = TimeSeries::new(
            rate,
            (0..16384).map(|i| (2.0 * PI * f0 * i as f64 / rate).sin()).collect(),
        )
        .unwrap();
        let p = welch_psd(&x, &cfg).unwrap();
        let peak = p
            .density
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, 32);
        assert!((p.total() - 0.5).abs() < 0.01, "{}", p.total());
    }

    #[test]
    fn csd_of_self_is_psd() {
        let x = noise(4096, 1, 1000.0);
        let cfg = small_cfg();
        let p = welch_psd(&x, &cfg).unwrap();
        let c = welch_csd(&x, &x, &cfg).unwrap();
        for (a, b) in p.density.iter().zip(c.values()) {
            assert!((a - b.re).abs() <= 1e-12 * a.abs().max(1e-300));
            assert_eq!(b.im, 0.0);
        }
    }

    #[test]
    fn csd_conjugate_symmetry() {
        let x = noise(4096, 1, 1000.0);
        let y = noise(4096, 2, 1000.0);
        let cfg = small_cfg();
        let xy = welch_csd(&x, &y, &cfg).unwrap();
        let yx = welch_csd(&y, &x, &cfg).unwrap();
        for (a, b) in xy.values().iter().zip(yx.values()) {
            assert!((a - b.conj()).norm() < 1e-14 * a.norm().max(1e-300));
        }
    }

    #[test]
    fn white_noise_is_flat() {
        let cfg = small_cfg();
        // 100 averages with no overlap needs 100 segments.
        let cfg = WelchConfig {
            overlap_fraction: 0.0,
            ..cfg
        };
        let x = noise(256 * 100, 9, 1000.0);
        let p = welch_psd(&x, &cfg).unwrap();
        // Average over 8-bin bands, skipping DC/Nyquist edge bins.
        let bands: Vec<f64> = p.density[1..p.density.len() - 1]
            .chunks(8)
            .filter(|c| c.len() == 8)
            .map(|c| c.iter().sum::<f64>() / 8.0)
            .collect();
        let max = bands.iter().copied().fold(f64::MIN, f64::max);
        let min = bands.iter().copied().fold(f64::MAX, f64::min);
        assert!(max / min < 2.0, "{}", max / min);
    }

    #[test]
    fn segment_longer_than_series_errors() {
        let x = noise(100, 1, 1000.0);
        assert!(welch_psd(&x, &small_cfg()).is_err());
    }

    #[test]
    fn static_gain_transfer() {
        let x = noise(8192, 3, 1000.0);
        let y = x.scaled(2.0);
        let t = transfer_estimate(&x, &y, &small_cfg()).unwrap();
        for (h, ok) in t.h21.iter().zip(&t.valid) {
            if *ok {
                assert!((h - Complex64::new(2.0, 0.0)).norm() < 1e-12);
            }
        }
    }

    /// First-order low-pass `y[n] = α x[n] + (1 − α) y[n−1]`.
    fn one_pole(x: &TimeSeries, alpha: f64) -> TimeSeries {
        let mut prev = 0.0;
        let y = x
            .samples()
            .iter()
            .map(|&s| {
                prev = alpha * s + (1.0 - alpha) * prev;
                prev
            })
            .collect();
        TimeSeries::new(x.rate_hz(), y).unwrap()
    }

    fn one_pole_response(alpha: f64, f: f64, rate: f64) -> f64 {
        let z = Complex64::from_polar(1.0, -2.0 * PI * f / rate);
        (alpha / (1.0 - (1.0 - alpha) * z)).norm()
    }

    #[test]
    fn single_pole_filter_response() {
        let rate = 1000.0;
        let x = noise(65536, 4, rate);
        let alpha = 0.2;
        let y = one_pole(&x, alpha);
        let t = transfer_estimate(&x, &y, &small_cfg()).unwrap();
        for (k, f) in t.freq_hz.iter().enumerate() {
            if (20.0..400.0).contains(f) {
                let expect = one_pole_response(alpha, *f, rate);
                assert!((t.h21[k].norm() - expect).abs() < 0.05 * expect, "f={f}");
            }
        }
    }

    #[test]
    fn noisy_output_bias_small_at_20db() {
        let rate = 1000.0;
        let x = noise(65536, 5, rate);
        let alpha = 0.3;
        let clean = one_pole(&x, alpha);
        // 20 dB SNR: noise RMS = 10 % of signal RMS.
        let y = add_gaussian_noise(&clean, 10.0, 77).unwrap();
        let t = transfer_estimate(&x, &y, &small_cfg()).unwrap();
        let mut worst: f64 = 0.0;
        for (k, f) in t.freq_hz.iter().enumerate() {
            if (10.0..250.0).contains(f) {
                let expect = one_pole_response(alpha, *f, rate);
                worst = worst.max((t.h21[k].norm() - expect).abs() / expect);
            }
        }
        assert!(worst < 0.05, "{worst}");
    }

    #[test]
    fn transfer_is_amplitude_invariant() {
        let x = noise(8192, 6, 1000.0);
        let y = one_pole(&x, 0.25);
        let a = transfer_estimate(&x, &y, &small_cfg()).unwrap();
        let b = transfer_estimate(&x.scaled(7.5), &y.scaled(7.5), &small_cfg()).unwrap();
        for (p, q) in a.h21.iter().zip(&b.h21) {
            assert!((p - q).norm() <= 1e-10 * p.norm());
        }
    }

    #[test]
    fn silent_input_is_all_invalid() {
        let x = TimeSeries::new(1000.0, vec![0.0; 1024]).unwrap();
        let y = noise(1024, 1, 1000.0);
        assert!(matches!(
            transfer_estimate(&x, &y, &small_cfg()),
            Err(Error::AllBinsInvalid)
        ));
    }
}
