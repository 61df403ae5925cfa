use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TimeSeries;
use crate::error::{Error, Result};

/// Sample encoding for WAV export. PCM formats require samples in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WavSampleFormat {
    #[default]
    Float32,
    Pcm16,
    Pcm24,
}

const TEXT_HEADER: &str = "# rate_hz=";

fn hound_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::Format {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Writes a mono WAV file. The sample rate is rounded to an integer.
pub fn write_wav(path: &Path, x: &TimeSeries, format: WavSampleFormat) -> Result<()> {
    let rate = x.rate_hz().round();
    if (rate - x.rate_hz()).abs() > 1e-9 || rate > u32::MAX as f64 {
        return Err(Error::InvalidInput(format!(
            "WAV needs an integer sample rate, got {}",
            x.rate_hz()
        )));
    }
    let (bits, sample_format) = match format {
        WavSampleFormat::Float32 => (32, hound::SampleFormat::Float),
        WavSampleFormat::Pcm16 => (16, hound::SampleFormat::Int),
        WavSampleFormat::Pcm24 => (24, hound::SampleFormat::Int),
    };
    if sample_format == hound::SampleFormat::Int && x.samples().iter().any(|s| !(s.abs() <= 1.0)) {
        return Err(Error::InvalidInput("PCM export needs samples in [-1, 1]".into()));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: rate as u32,
        bits_per_sample: bits,
        sample_format,
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(|e| hound_err(path, e))?;
    let full_scale = ((1i64 << (bits - 1)) - 1) as f64;
    for &s in x.samples() {
        match format {
            WavSampleFormat::Float32 => w.write_sample(s as f32),
            _ => w.write_sample((s * full_scale).round() as i32),
        }
        .map_err(|e| hound_err(path, e))?;
    }
    w.finalize().map_err(|e| hound_err(path, e))
}

/// Reads the first channel of a WAV file; integer PCM is scaled to `[-1, 1]`.
pub fn read_wav(path: &Path) -> Result<TimeSeries> {
    let mut r = hound::WavReader::open(path).map_err(|e| hound_err(path, e))?;
    let spec = r.spec();
    let channels = spec.channels.max(1) as usize;
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => r
            .samples::<f32>()
            .step_by(channels)
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        hound::SampleFormat::Int => {
            let full_scale = ((1i64 << (spec.bits_per_sample - 1)) - 1) as f64;
            r.samples::<i32>()
                .step_by(channels)
                .map(|s| s.map(|v| v as f64 / full_scale))
                .collect::<std::result::Result<_, _>>()
        }
    }
    .map_err(|e| hound_err(path, e))?;
    TimeSeries::new(spec.sample_rate as f64, samples)
}

/// Writes `# rate_hz=<rate>` followed by one sample per line (exact round trip).
pub fn write_text(path: &Path, x: &TimeSeries) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut put = || -> std::io::Result<()> {
        writeln!(w, "{TEXT_HEADER}{}", x.rate_hz())?;
        for s in x.samples() {
            writeln!(w, "{s}")?;
        }
        w.flush()
    };
    put().map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<TimeSeries> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .map_err(|e| Error::io(path, e))?;
    let rate: f64 = header
        .trim()
        .strip_prefix(TEXT_HEADER)
        .ok_or_else(|| bad(format!("expected `{TEXT_HEADER}<rate>` header")))?
        .parse()
        .map_err(|e| bad(format!("bad sample rate: {e}")))?;
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        samples.push(t.parse().map_err(|e| bad(format!("line {}: {e}", i + 2)))?);
    }
    TimeSeries::new(rate, samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series() -> TimeSeries {
        TimeSeries::new(8000.0, (0..500).map(|i| (i as f64 * 0.37).sin() * 0.9).collect()).unwrap()
    }

    #[test]
    fn text_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        let x = series();
        write_text(&p, &x).unwrap();
        assert_eq!(read_text(&p).unwrap(), x);
    }

    #[test]
    fn text_without_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.txt");
        std::fs::write(&p, "1.0\n2.0\n").unwrap();
        assert!(matches!(read_text(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn wav_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let x = series();
        for (fmt, tol) in [
            (WavSampleFormat::Float32, 1e-7),
            (WavSampleFormat::Pcm16, 1.0 / 32767.0),
            (WavSampleFormat::Pcm24, 1.0 / 8_388_607.0),
        ] {
            let p = dir.path().join(format!("{fmt:?}.wav"));
            write_wav(&p, &x, fmt).unwrap();
            let y = read_wav(&p).unwrap();
            assert_eq!(y.rate_hz(), 8000.0);
            assert_eq!(y.len(), x.len());
            for (a, b) in x.samples().iter().zip(y.samples()) {
                assert!((a - b).abs() <= tol, "{fmt:?}");
            }
        }
    }

    #[test]
    fn pcm_rejects_clipping() {
        let dir = tempfile::tempdir().unwrap();
        let x = TimeSeries::new(8000.0, vec![0.5, 1.5]).unwrap();
        assert!(write_wav(&dir.path().join("c.wav"), &x, WavSampleFormat::Pcm16).is_err());
    }
}
