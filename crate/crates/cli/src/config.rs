//! Run configuration: a TOML file with one section per pipeline stage. Every
//! key is optional and falls back to the value in `RunConfig::default()`.

use std::path::{Path, PathBuf};

use bedweigh::dataset::{BedSpec, CohortSpec, ExcitationSpec, TrialConfig};
use bedweigh::dsp::{FrequencyBand, WelchConfig, Window};
use bedweigh::eval::{Protocol, DEFAULT_NOISE_LEVELS};
use bedweigh::excitation::{ChirpConfig, DEFAULT_COVERAGE};
use bedweigh::par::derive_seed;
use bedweigh::pinn::{Architecture, HeightActivation, SpectraActivation, TrainConfig};
use bedweigh::{Error, Result};
use serde::{Deserialize, Serialize};

/// Seed streams derived from the master seed, one per randomized stage.
pub mod stream {
    pub const COHORT: u64 = 1;
    pub const EXCITATION: u64 = 2;
    pub const TRIAL: u64 = 3;
    pub const SPLITS: u64 = 4;
    pub const TRAIN: u64 = 5;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; required by every randomized command.
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub bed: BedSection,
    pub cohort: CohortSection,
    pub chirp: ChirpSection,
    pub band: BandSection,
    pub excitation: ExcitationSection,
    pub trial: TrialSection,
    pub welch: WelchSection,
    pub train: TrainSection,
    pub network: NetworkSection,
    pub robustness: RobustnessSection,
    pub sensitivity: SensitivitySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            out: PathBuf::from("out"),
            bed: BedSection::default(),
            cohort: CohortSection::default(),
            chirp: ChirpSection::default(),
            band: BandSection::default(),
            excitation: ExcitationSection::default(),
            trial: TrialSection::default(),
            welch: WelchSection::default(),
            train: TrainSection::default(),
            network: NetworkSection::default(),
            robustness: RobustnessSection::default(),
            sensitivity: SensitivitySection::default(),
        }
    }
}

/// Bed preset name, or a JSON file holding a full bed description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BedSection {
    pub preset: String,
    pub path: Option<PathBuf>,
}

impl Default for BedSection {
    fn default() -> Self {
        BedSection {
            preset: "wooden".into(),
            path: None,
        }
    }
}

/// Cohort ranges, or a JSON file holding a cohort range description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSection {
    pub path: Option<PathBuf>,
    pub count: usize,
    pub height_cm: (f64, f64),
    pub bmi: (f64, f64),
    pub mass_kg: (f64, f64),
}

impl Default for CohortSection {
    fn default() -> Self {
        let c = CohortSpec::default();
        CohortSection {
            path: None,
            count: c.count,
            height_cm: c.height_cm,
            bmi: c.bmi,
            mass_kg: c.mass_kg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChirpSection {
    pub f0_hz: f64,
    pub f1_hz: f64,
    pub duration_s: f64,
    pub rate_hz: f64,
}

impl Default for ChirpSection {
    fn default() -> Self {
        let c = ChirpConfig::default();
        ChirpSection {
            f0_hz: c.f0_hz,
            f1_hz: c.f1_hz,
            duration_s: c.duration_s,
            rate_hz: c.rate_hz,
        }
    }
}

/// Feature band: identified from the chirp response when both edges are
/// absent, fixed when both are given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandSection {
    pub lo_hz: Option<f64>,
    pub hi_hz: Option<f64>,
    pub coverage: f64,
}

impl Default for BandSection {
    fn default() -> Self {
        BandSection {
            lo_hz: None,
            hi_hz: None,
            coverage: DEFAULT_COVERAGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExcitationSection {
    pub duration_s: f64,
    pub rate_hz: f64,
    pub tones_per_hz: f64,
    /// Widen the excitation to also cover one band-width below and above the
    /// feature band, so neighbouring bands can be compared.
    pub cover_neighbours: bool,
}

impl Default for ExcitationSection {
    fn default() -> Self {
        ExcitationSection {
            duration_s: 10.0,
            rate_hz: 25_600.0,
            tones_per_hz: 1.0,
            cover_neighbours: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialSection {
    pub repetitions: usize,
    pub added_masses: Vec<f64>,
    pub noise_pct: f64,
}

impl Default for TrialSection {
    fn default() -> Self {
        TrialSection {
            repetitions: 20,
            added_masses: (0..=5).map(f64::from).collect(),
            noise_pct: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WelchSection {
    pub segment_len: usize,
    pub overlap_fraction: f64,
    pub window: Window,
}

impl Default for WelchSection {
    fn default() -> Self {
        let w = WelchConfig::default();
        WelchSection {
            segment_len: w.segment_len,
            overlap_fraction: w.overlap_fraction,
            window: w.window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub protocol: Protocol,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub restarts: usize,
    /// 0 trains full-batch.
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            protocol: Protocol::Lopo,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            epochs: t.epochs,
            restarts: t.restarts,
            batch_size: t.batch_size.unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub spectra_hidden: Vec<usize>,
    pub height_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub spectra_activation: SpectraActivation,
    pub height_activation: HeightActivation,
    pub per_unit_pau: bool,
    pub use_height: bool,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let a = Architecture::new(0);
        NetworkSection {
            spectra_hidden: a.spectra_hidden,
            height_hidden: a.height_hidden,
            head_hidden: a.head_hidden,
            spectra_activation: a.spectra_activation,
            height_activation: a.height_activation,
            per_unit_pau: a.per_unit_pau,
            use_height: a.use_height,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessSection {
    /// Extra sensor noise levels in percent of signal RMS.
    pub noise_levels: Vec<f64>,
    /// Candidate `[lo, hi]` bands; empty compares the dataset band with one
    /// band of equal width below and one above it.
    pub bands: Vec<(f64, f64)>,
}

impl Default for RobustnessSection {
    fn default() -> Self {
        RobustnessSection {
            noise_levels: DEFAULT_NOISE_LEVELS.to_vec(),
            bands: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivitySection {
    /// Added masses in kg.
    pub added_masses: Vec<f64>,
    /// Subject height setting the contact patch.
    pub height_cm: f64,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        SensitivitySection {
            added_masses: vec![0.0, 40.0, 80.0],
            height_cm: 170.0,
        }
    }
}

fn check_path(key: &str, path: &Option<PathBuf>, base: &Path) -> Result<Option<PathBuf>> {
    match path {
        None => Ok(None),
        Some(p) => {
            let full = if p.is_relative() { base.join(p) } else { p.clone() };
            if full.is_file() {
                Ok(Some(full))
            } else {
                Err(Error::config(key, format!("file {} does not exist", full.display())))
            }
        }
    }
}

/// Dotted `section.key` of the assignment on the line holding byte `pos`.
fn key_at(text: &str, pos: usize) -> String {
    let before = &text[..pos.min(text.len())];
    let line_start = before.rfind('\n').map_or(0, |i| i + 1);
    let line = text[line_start..].lines().next().unwrap_or("");
    let key = line.split_once('=').map_or("", |(k, _)| k.trim());
    let section = before[..line_start]
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix('[').and_then(|l| l.strip_suffix(']')))
        .unwrap_or("");
    match (section.is_empty(), key.is_empty()) {
        (_, true) if section.is_empty() => "<file>".into(),
        (_, true) => section.into(),
        (true, false) => key.into(),
        (false, false) => format!("{section}.{key}"),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(key_at(text, e.span().map_or(0, |s| s.start)), e.message()))
    }

    /// Reads `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map_or_else(PathBuf::new, Path::to_path_buf);
        Ok((Self::from_toml(&text)?, base))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| {
            Error::config(
                "seed",
                "a seed is required for this command (set `seed` or pass --seed)",
            )
        })
    }

    pub fn bed_spec(&self, base: &Path) -> Result<BedSpec> {
        let bed = match check_path("bed.path", &self.bed.path, base)? {
            Some(p) => read_json(&p)?,
            None => BedSpec::by_name(&self.bed.preset)?,
        };
        bed.validate()?;
        Ok(bed)
    }

    pub fn cohort_spec(&self, base: &Path) -> Result<CohortSpec> {
        let spec = match check_path("cohort.path", &self.cohort.path, base)? {
            Some(p) => read_json(&p)?,
            None => CohortSpec {
                count: self.cohort.count,
                height_cm: self.cohort.height_cm,
                bmi: self.cohort.bmi,
                mass_kg: self.cohort.mass_kg,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn chirp(&self) -> Result<ChirpConfig> {
        let c = &self.chirp;
        let chirp = ChirpConfig {
            f0_hz: c.f0_hz,
            f1_hz: c.f1_hz,
            duration_s: c.duration_s,
            rate_hz: c.rate_hz,
        };
        if !(c.f0_hz >= 0.0 && c.f0_hz < c.f1_hz && c.f1_hz <= c.rate_hz / 2.0) {
            return Err(Error::config("chirp", "needs 0 <= f0_hz < f1_hz <= rate_hz / 2"));
        }
        if !(c.duration_s > 0.0 && c.duration_s.is_finite()) {
            return Err(Error::config("chirp.duration_s", "must be positive"));
        }
        Ok(chirp)
    }

    pub fn welch(&self) -> Result<WelchConfig> {
        let w = WelchConfig {
            segment_len: self.welch.segment_len,
            overlap_fraction: self.welch.overlap_fraction,
            window: self.welch.window,
        };
        w.validate().map_err(|e| Error::config("welch", e.to_string()))?;
        Ok(w)
    }

    /// Explicit band, or `None` when it is to be identified.
    pub fn fixed_band(&self) -> Result<Option<FrequencyBand>> {
        match (self.band.lo_hz, self.band.hi_hz) {
            (None, None) => Ok(None),
            (Some(lo), Some(hi)) => FrequencyBand::new(lo, hi)
                .map(Some)
                .map_err(|e| Error::config("band", e.to_string())),
            _ => Err(Error::config(
                "band",
                "set both lo_hz and hi_hz, or neither for automatic selection",
            )),
        }
    }

    pub fn excitation(&self, band: &FrequencyBand, seed: u64) -> Result<ExcitationSpec> {
        let e = &self.excitation;
        if !(e.tones_per_hz > 0.0 && e.tones_per_hz.is_finite()) {
            return Err(Error::config("excitation.tones_per_hz", "must be positive"));
        }
        if !(e.duration_s > 0.0 && e.rate_hz > 0.0) {
            return Err(Error::config("excitation", "duration_s and rate_hz must be positive"));
        }
        let span = if e.cover_neighbours {
            let w = band.width();
            FrequencyBand::new((band.lo_hz - w).max(0.0), band.hi_hz + w)?
        } else {
            *band
        };
        span.validate_for_rate(e.rate_hz)
            .map_err(|err| Error::config("excitation", err.to_string()))?;
        Ok(ExcitationSpec {
            band: span,
            tone_count: (span.width() * e.tones_per_hz).round().max(1.0) as usize,
            duration_s: e.duration_s,
            rate_hz: e.rate_hz,
            seed: derive_seed(seed, &[stream::EXCITATION]),
        })
    }

    pub fn trial(&self, excitation: ExcitationSpec, seed: u64) -> Result<TrialConfig> {
        let t = TrialConfig {
            repetitions: self.trial.repetitions,
            added_masses: self.trial.added_masses.clone(),
            noise_pct: self.trial.noise_pct,
            ..TrialConfig::new(excitation, derive_seed(seed, &[stream::TRIAL]))
        };
        t.validate()?;
        Ok(t)
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let t = &self.train;
        let cfg = TrainConfig {
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            epochs: t.epochs,
            restarts: t.restarts,
            batch_size: (t.batch_size > 0).then_some(t.batch_size),
            seed: derive_seed(seed, &[stream::TRAIN]),
        };
        cfg.validate().map_err(|e| Error::config("train", e.to_string()))?;
        Ok(cfg)
    }

    /// Network template; the input width is taken from the dataset.
    pub fn architecture(&self) -> Result<Architecture> {
        let n = &self.network;
        let arch = Architecture {
            input_width: 1,
            spectra_hidden: n.spectra_hidden.clone(),
            height_hidden: n.height_hidden.clone(),
            head_hidden: n.head_hidden.clone(),
            spectra_activation: n.spectra_activation,
            height_activation: n.height_activation,
            per_unit_pau: n.per_unit_pau,
            use_height: n.use_height,
        };
        arch.validate().map_err(|e| Error::config("network", e.to_string()))?;
        Ok(arch)
    }

    pub fn candidate_bands(&self, dataset_band: &FrequencyBand) -> Result<Vec<FrequencyBand>> {
        if self.robustness.bands.is_empty() {
            let w = dataset_band.width();
            let below = FrequencyBand::new((dataset_band.lo_hz - w).max(0.0), dataset_band.lo_hz)?;
            let above = FrequencyBand::new(dataset_band.hi_hz, dataset_band.hi_hz + w)?;
            return Ok(vec![*dataset_band, below, above]);
        }
        self.robustness
            .bands
            .iter()
            .enumerate()
            .map(|(i, &(lo, hi))| {
                FrequencyBand::new(lo, hi).map_err(|e| Error::config(format!("robustness.bands[{i}]"), e.to_string()))
            })
            .collect()
    }

    pub fn noise_levels(&self) -> Result<Vec<f64>> {
        let levels = &self.robustness.noise_levels;
        if levels.is_empty() || levels.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config(
                "robustness.noise_levels",
                "needs at least one non-negative level",
            ));
        }
        Ok(levels.clone())
    }
}
