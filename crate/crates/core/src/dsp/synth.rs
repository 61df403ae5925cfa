use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FrequencyBand, TimeSeries};
use crate::error::{Error, Result};

fn sample_count(duration_s: f64, rate_hz: f64) -> Result<usize> {
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(Error::InvalidInput(format!(
            "sample rate must be positive, got {rate_hz}"
        )));
    }
    if !(duration_s.is_finite() && duration_s > 0.0) {
        return Err(Error::InvalidInput(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    let n = (duration_s * rate_hz).round() as usize;
    if n == 0 {
        return Err(Error::InvalidInput("signal would have no samples".into()));
    }
    Ok(n)
}

/// Unit-amplitude linear chirp `sin(2π(f0·t + (f1 − f0)·t² / 2T))`.
pub fn synth_chirp(f0_hz: f64, f1_hz: f64, duration_s: f64, rate_hz: f64) -> Result<TimeSeries> {
    let n = sample_count(duration_s, rate_hz)?;
    if !(f0_hz >= 0.0 && f1_hz >= 0.0 && f0_hz.is_finite() && f1_hz.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "chirp frequencies must be non-negative, got {f0_hz} and {f1_hz}"
        )));
    }
    let nyquist = rate_hz / 2.0;
    if f0_hz.max(f1_hz) > nyquist {
        return Err(Error::InvalidInput(format!(
            "chirp reaches {} Hz, above Nyquist {nyquist} Hz",
            f0_hz.max(f1_hz)
        )));
    }
    let sweep = (f1_hz - f0_hz) / (2.0 * duration_s);
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate_hz;
            (2.0 * PI * (f0_hz * t + sweep * t * t)).sin()
        })
        .collect();
    TimeSeries::new(rate_hz, samples)
}

/// Tone frequencies: centres of `count` equal sub-bands, moved to the
/// nearest `1 / duration` multiple when that stays inside the band.
fn tone_frequencies(band: &FrequencyBand, duration_s: f64, count: usize) -> Vec<f64> {
    let step = band.width() / count as f64;
    (0..count)
        .map(|k| {
            let f = band.lo_hz + (k as f64 + 0.5) * step;
            let snapped = (f * duration_s).round() / duration_s;
            if band.contains(snapped) {
                snapped
            } else {
                f
            }
        })
        .collect()
}

/// Multi-tone excitation concentrated in `band`: `tone_count` sinusoids of
/// amplitude `1/√tone_count` with phases drawn from `seed`.
pub fn synth_excitation(
    band: &FrequencyBand,
    duration_s: f64,
    rate_hz: f64,
    tone_count: usize,
    seed: u64,
) -> Result<TimeSeries> {
    band.validate_for_rate(rate_hz)?;
    let n = sample_count(duration_s, rate_hz)?;
    if tone_count == 0 {
        return Err(Error::InvalidInput("excitation needs at least one tone".into()));
    }
    let freqs = tone_frequencies(band, duration_s, tone_count);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = (0..tone_count).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let amp = 1.0 / (tone_count as f64).sqrt();
    let mut samples = vec![0.0; n];
    for (f, ph) in freqs.iter().zip(&phases) {
        let w = 2.0 * PI * f / rate_hz;
        for (i, s) in samples.iter_mut().enumerate() {
            *s += amp * (w * i as f64 + ph).sin();
        }
    }
    TimeSeries::new(rate_hz, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::band_energy;
    use realfft::RealFftPlanner;

    #[test]
    fn chirp_length_and_amplitude() {
        let c = synth_chirp(10.0, 1000.0, 1.0, 25600.0).unwrap();
        assert_eq!(c.len(), 25_600);
        assert!(c.samples().iter().all(|s| s.abs() <= 1.0));
        assert!(synth_chirp(10.0, 13000.0, 1.0, 25600.0).is_err());
    }

    #[test]
    fn degenerate_chirp_is_a_tone() {
        let c = synth_chirp(100.0, 100.0, 0.5, 8000.0).unwrap();
        for (i, s) in c.samples().iter().enumerate() {
            let expect = (2.0 * PI * 100.0 * i as f64 / 8000.0).sin();
            assert!((s - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn chirp_ridge_at_midpoint() {
        let rate = 25600.0;
        let c = synth_chirp(10.0, 1000.0, 1.0, rate).unwrap();
        let n = 2048;
        let centre = 12_800;
        let window = crate::dsp::Window::Hann.coefficients(n);
        let mut buf: Vec<f64> = c.samples()[centre - n / 2..centre + n / 2]
            .iter()
            .zip(&window)
            .map(|(s, w)| s * w)
            .collect();
        let fft = RealFftPlanner::<f64>::new().plan_fft_forward(n);
        let mut spec = fft.make_output_vec();
        fft.process(&mut buf, &mut spec).unwrap();
        let peak = spec
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
            .unwrap()
            .0;
        let df = rate / n as f64;
        assert!((peak as f64 * df - 505.0).abs() <= df, "{}", peak as f64 * df);
    }

    #[test]
    fn excitation_energy_in_band() {
        let band = FrequencyBand::new(500.0, 900.0).unwrap();
        let x = synth_excitation(&band, 2.0, 25600.0, 16, 11).unwrap();
        let frac = band_energy(&x, &band).unwrap() / (x.energy() / x.len() as f64);
        assert!(frac >= 0.9, "{frac}");
    }

    #[test]
    fn single_tone_at_midpoint() {
        let band = FrequencyBand::new(500.0, 900.0).unwrap();
        let x = synth_excitation(&band, 1.0, 25600.0, 1, 3).unwrap();
        assert_eq!(tone_frequencies(&band, 1.0, 1), vec![700.0]);
        let narrow = FrequencyBand::new(699.0, 701.0).unwrap();
        assert!(band_energy(&x, &narrow).unwrap() > 0.99 * x.energy() / x.len() as f64);
    }

    #[test]
    fn seeds_change_phase_not_band_energy() {
        let band = FrequencyBand::new(500.0, 900.0).unwrap();
        let a = synth_excitation(&band, 1.0, 25600.0, 12, 1).unwrap();
        let b = synth_excitation(&band, 1.0, 25600.0, 12, 2).unwrap();
        assert_ne!(a, b);
        let ea = band_energy(&a, &band).unwrap();
        let eb = band_energy(&b, &band).unwrap();
        assert!((ea - eb).abs() < 0.01 * ea);
        assert_eq!(a, synth_excitation(&band, 1.0, 25600.0, 12, 1).unwrap());
    }

    #[test]
    fn tone_frequencies_stay_in_band() {
        let band = FrequencyBand::new(500.25, 500.75).unwrap();
        assert!(tone_frequencies(&band, 1.0, 3).iter().all(|f| band.contains(*f)));
    }
}
