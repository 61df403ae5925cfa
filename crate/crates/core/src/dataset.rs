//! Synthetic cohorts driven through the plate model: trial simulation,
//! transfer-function featurization and the line-delimited dataset file.
//!
//! A dataset file holds one JSON manifest line followed by one JSON line per
//! [`SampleRecord`]. Raw sensor series are not stored; they are regenerated
//! bit-identically from the manifest and each record's seed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{
    synth_excitation, with_gaussian_noise, FrequencyBand, SpectralDriver, TimeSeries, Welch, WelchConfig,
};
use crate::error::{Error, Result};
use crate::excitation::{BandReport, Probe};
use crate::jsonl;
use crate::par;
use crate::plate::{ContactPatch, ModalSystem, PlateSpec, Point, DEFAULT_MODE_CAP};

pub const FORMAT_NAME: &str = "bedweigh-dataset";
pub const FORMAT_VERSION: u32 = 1;
/// Absolute noise standard deviation added to every simulated sensor on top
/// of the relative level, so a silent excitation still yields pure noise.
pub const NOISE_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub id: String,
    pub height_cm: f64,
    pub mass_kg: f64,
}

impl SubjectProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.height_cm.is_finite() && self.height_cm > 0.0) {
            return Err(Error::InvalidInput(format!(
                "subject {}: height must be positive",
                self.id
            )));
        }
        if !(self.mass_kg.is_finite() && self.mass_kg > 0.0) {
            return Err(Error::InvalidInput(format!(
                "subject {}: mass must be positive",
                self.id
            )));
        }
        Ok(())
    }
}

/// Uniform draws of height and BMI; mass = BMI · height².
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub count: usize,
    pub height_cm: (f64, f64),
    pub bmi: (f64, f64),
    pub mass_kg: (f64, f64),
}

impl Default for CohortSpec {
    fn default() -> Self {
        CohortSpec {
            count: 11,
            height_cm: (150.0, 185.0),
            bmi: (19.5, 27.5),
            mass_kg: (40.0, 120.0),
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi;
        if self.count == 0 {
            return Err(Error::config("cohort.count", "must be at least 1"));
        }
        if !ordered(self.height_cm) || self.height_cm.0 < 140.0 || self.height_cm.1 > 200.0 {
            return Err(Error::config("cohort.height_cm", "needs 140 <= lo <= hi <= 200"));
        }
        if !ordered(self.bmi) {
            return Err(Error::config("cohort.bmi", "needs 0 < lo <= hi"));
        }
        if !ordered(self.mass_kg) || self.mass_kg.0 < 40.0 || self.mass_kg.1 > 120.0 {
            return Err(Error::config("cohort.mass_kg", "needs 40 <= lo <= hi <= 120"));
        }
        Ok(())
    }
}

/// Deterministic cohort `P01, P02, …` drawn from `seed`.
pub fn generate_cohort(spec: &CohortSpec, seed: u64) -> Result<Vec<SubjectProfile>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = spec.count.to_string().len().max(2);
    Ok((0..spec.count)
        .map(|i| {
            let h = rng.gen_range(spec.height_cm.0..=spec.height_cm.1);
            let bmi = rng.gen_range(spec.bmi.0..=spec.bmi.1);
            let mass = (bmi * (h / 100.0).powi(2)).clamp(spec.mass_kg.0, spec.mass_kg.1);
            SubjectProfile {
                id: format!("P{:0width$}", i + 1),
                height_cm: h,
                mass_kg: mass,
            }
        })
        .collect())
}

/// Centred contact rectangle scaled by height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchModel {
    pub k_len: f64,
    pub k_wid: f64,
}

impl Default for PatchModel {
    fn default() -> Self {
        PatchModel { k_len: 0.9, k_wid: 0.4 }
    }
}

/// Largest share of a plate side the patch may cover.
const PATCH_CLAMP: f64 = 0.95;

/// `extent_x = min(0.95 a, height/100 · k_len)`, `extent_y = min(0.95 b, k_wid · b)`.
pub fn height_to_patch(height_cm: f64, plate: &PlateSpec, model: &PatchModel) -> Result<ContactPatch> {
    if !(height_cm.is_finite() && height_cm > 0.0) {
        return Err(Error::InvalidInput(format!("height must be positive, got {height_cm}")));
    }
    if !(model.k_len > 0.0 && model.k_wid > 0.0) {
        return Err(Error::config("bed.patch", "k_len and k_wid must be positive"));
    }
    Ok(ContactPatch {
        center_x: plate.length_a / 2.0,
        center_y: plate.width_b / 2.0,
        extent_x: (height_cm / 100.0 * model.k_len).min(PATCH_CLAMP * plate.length_a),
        extent_y: (model.k_wid * plate.width_b).min(PATCH_CLAMP * plate.width_b),
    })
}

/// One deck board with its sensor pair. The near sensor sits on the drive
/// point and records the drive with unit gain; the far sensor records the
/// plate velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoardSetup {
    pub plate: PlateSpec,
    pub source: Point,
    pub far_sensor: Point,
    /// Drive amplitude reaching this board relative to the source board.
    pub drive_gain: f64,
    /// Share of the subject's mass resting on this board.
    pub load_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BedSpec {
    pub name: String,
    pub boards: Vec<BoardSetup>,
    pub source_board: usize,
    pub mode_cap: u32,
    pub patch: PatchModel,
}

impl BedSpec {
    /// Single-deck wooden bed.
    pub fn wooden() -> Self {
        let plate = PlateSpec::bed_deck();
        BedSpec {
            name: "wooden".into(),
            boards: vec![BoardSetup {
                plate,
                source: Point::new(0.42 * plate.length_a, 0.12 * plate.width_b),
                far_sensor: Point::new(0.58 * plate.length_a, 0.88 * plate.width_b),
                drive_gain: 1.0,
                load_fraction: 1.0,
            }],
            source_board: 0,
            mode_cap: DEFAULT_MODE_CAP,
            patch: PatchModel::default(),
        }
    }

    /// Four independent steel deck boards along the bed, driven from the second.
    pub fn steel() -> Self {
        let plate = PlateSpec::steel_deck_board();
        let gains = [0.45, 1.0, 0.55, 0.3];
        let loads = [0.14, 0.36, 0.32, 0.18];
        BedSpec {
            name: "steel".into(),
            boards: gains
                .iter()
                .zip(loads)
                .map(|(&g, l)| BoardSetup {
                    plate,
                    source: Point::new(0.42 * plate.length_a, 0.12 * plate.width_b),
                    far_sensor: Point::new(0.58 * plate.length_a, 0.88 * plate.width_b),
                    drive_gain: g,
                    load_fraction: l,
                })
                .collect(),
            source_board: 1,
            mode_cap: DEFAULT_MODE_CAP,
            patch: PatchModel::default(),
        }
    }

    /// Bench-top aluminium plate.
    pub fn desk() -> Self {
        let plate = PlateSpec::desk_aluminium();
        BedSpec {
            name: "desk".into(),
            boards: vec![BoardSetup {
                plate,
                source: Point::new(0.3 * plate.length_a, 0.35 * plate.width_b),
                far_sensor: Point::new(0.62 * plate.length_a, 0.7 * plate.width_b),
                drive_gain: 1.0,
                load_fraction: 1.0,
            }],
            source_board: 0,
            mode_cap: DEFAULT_MODE_CAP,
            patch: PatchModel {
                k_len: 0.15,
                k_wid: 0.25,
            },
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "wooden" => Ok(Self::wooden()),
            "steel" => Ok(Self::steel()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::config(
                "bed.preset",
                format!("unknown bed `{other}` (wooden, steel, desk)"),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.boards.is_empty() {
            return Err(Error::config("bed.boards", "bed needs at least one board"));
        }
        if self.source_board >= self.boards.len() {
            return Err(Error::config("bed.source_board", "index outside the board list"));
        }
        if self.mode_cap == 0 {
            return Err(Error::config("bed.mode_cap", "must be at least 1"));
        }
        let mut load = 0.0;
        for (i, b) in self.boards.iter().enumerate() {
            b.plate.validate()?;
            if !b.plate.contains(b.source) || !b.plate.contains(b.far_sensor) {
                return Err(Error::config(
                    format!("bed.boards[{i}]"),
                    "sensor or source outside the plate",
                ));
            }
            if !(b.drive_gain.is_finite() && b.drive_gain > 0.0) {
                return Err(Error::config(format!("bed.boards[{i}].drive_gain"), "must be positive"));
            }
            if !(b.load_fraction.is_finite() && b.load_fraction >= 0.0) {
                return Err(Error::config(
                    format!("bed.boards[{i}].load_fraction"),
                    "must be non-negative",
                ));
            }
            load += b.load_fraction;
        }
        if !(load > 0.0 && load <= 1.0 + 1e-9) {
            return Err(Error::config(
                "bed.boards",
                format!("load fractions must sum to (0, 1], got {load}"),
            ));
        }
        Ok(())
    }

    /// Probe of the source board with an unloaded full-plate patch, as used
    /// for band identification.
    pub fn source_probe(&self) -> Probe {
        let b = &self.boards[self.source_board];
        Probe {
            source: b.source,
            sensor: b.far_sensor,
            patch: ContactPatch::full(&b.plate),
            mode_cap: self.mode_cap,
        }
    }

    /// Probe of the source board with the patch of a subject of `height_cm`.
    pub fn subject_probe(&self, height_cm: f64) -> Result<Probe> {
        let b = &self.boards[self.source_board];
        Ok(Probe {
            source: b.source,
            sensor: b.far_sensor,
            patch: height_to_patch(height_cm, &b.plate, &self.patch)?,
            mode_cap: self.mode_cap,
        })
    }
}

/// Multi-tone excitation concentrated in `band`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSpec {
    pub band: FrequencyBand,
    pub tone_count: usize,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub seed: u64,
}

impl ExcitationSpec {
    /// Ten seconds at 25.6 kHz with one tone per hertz of band.
    pub fn for_band(band: FrequencyBand, seed: u64) -> Self {
        ExcitationSpec {
            band,
            tone_count: band.width().round().max(1.0) as usize,
            duration_s: 10.0,
            rate_hz: 25_600.0,
            seed,
        }
    }

    pub fn synth(&self) -> Result<TimeSeries> {
        synth_excitation(&self.band, self.duration_s, self.rate_hz, self.tone_count, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub excitation: ExcitationSpec,
    pub repetitions: usize,
    pub added_masses: Vec<f64>,
    pub noise_pct: f64,
    pub seed: u64,
}

impl TrialConfig {
    /// Twenty repetitions at 0–5 kg added mass in 1 kg steps, 2 % noise.
    pub fn new(excitation: ExcitationSpec, seed: u64) -> Self {
        TrialConfig {
            excitation,
            repetitions: 20,
            added_masses: (0..=5).map(f64::from).collect(),
            noise_pct: 2.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::config("trial.repetitions", "must be at least 1"));
        }
        if self.added_masses.is_empty() || self.added_masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(Error::config(
                "trial.added_masses",
                "needs one or more non-negative masses",
            ));
        }
        if !(self.noise_pct.is_finite() && self.noise_pct >= 0.0) {
            return Err(Error::config("trial.noise_pct", "must be non-negative"));
        }
        Ok(())
    }
}

/// Near (drive) and far (response) sensor series of one board.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorPair {
    pub near: TimeSeries,
    pub far: TimeSeries,
}

/// Drives every board of a bed with one cached excitation spectrum.
pub struct TrialSimulator {
    bed: BedSpec,
    driver: SpectralDriver,
    excitation: TimeSeries,
}

impl TrialSimulator {
    pub fn new(bed: &BedSpec, excitation: &TimeSeries) -> Result<Self> {
        bed.validate()?;
        Ok(TrialSimulator {
            bed: bed.clone(),
            driver: SpectralDriver::new(excitation),
            excitation: excitation.clone(),
        })
    }

    /// Noise-free sensor pairs for `subject` carrying `added_mass_kg`.
    pub fn clean(&self, subject: &SubjectProfile, added_mass_kg: f64) -> Result<Vec<SensorPair>> {
        subject.validate()?;
        if !(added_mass_kg.is_finite() && added_mass_kg >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "added mass must be >= 0, got {added_mass_kg}"
            )));
        }
        let total = subject.mass_kg + added_mass_kg;
        let freqs = self.driver.frequencies();
        self.bed
            .boards
            .iter()
            .map(|b| {
                let probe = Probe {
                    source: b.source,
                    sensor: b.far_sensor,
                    patch: height_to_patch(subject.height_cm, &b.plate, &self.bed.patch)?,
                    mode_cap: self.bed.mode_cap,
                };
                let sys: ModalSystem = probe.system(&b.plate, b.load_fraction * total)?;
                let response = freqs
                    .iter()
                    .map(|&f| Ok(sys.velocity_per_force(f)? * b.drive_gain))
                    .collect::<Result<Vec<Complex64>>>()?;
                Ok(SensorPair {
                    near: self.excitation.scaled(b.drive_gain),
                    far: self.driver.drive_with(&response)?,
                })
            })
            .collect()
    }

    pub fn simulate(
        &self,
        subject: &SubjectProfile,
        added_mass_kg: f64,
        noise_pct: f64,
        seed: u64,
    ) -> Result<Vec<SensorPair>> {
        Ok(add_sensor_noise(
            &self.clean(subject, added_mass_kg)?,
            noise_pct,
            seed,
            NOISE_FLOOR,
        ))
    }
}

/// Adds independent Gaussian noise of `pct`% RMS plus `floor` to every
/// series; streams are derived from `seed`, board index and sensor.
pub fn add_sensor_noise(pairs: &[SensorPair], pct: f64, seed: u64, floor: f64) -> Vec<SensorPair> {
    let noisy = |x: &TimeSeries, board: usize, sensor: u64| {
        let sigma = pct / 100.0 * x.rms() + floor;
        let s = par::derive_seed(seed, &[board as u64, sensor]);
        TimeSeries::new(x.rate_hz(), with_gaussian_noise(x.samples(), sigma, s)).expect("same length and rate")
    };
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| SensorPair {
            near: noisy(&p.near, i, 0),
            far: noisy(&p.far, i, 1),
        })
        .collect()
}

/// Per-board sensor pairs of one trial (see [`TrialSimulator`]).
pub fn simulate_trial(
    bed: &BedSpec,
    subject: &SubjectProfile,
    added_mass_kg: f64,
    excitation: &TimeSeries,
    noise_pct: f64,
    seed: u64,
) -> Result<Vec<SensorPair>> {
    if !(noise_pct.is_finite() && noise_pct >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "noise percentage must be >= 0, got {noise_pct}"
        )));
    }
    TrialSimulator::new(bed, excitation)?.simulate(subject, added_mass_kg, noise_pct, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Per-board `|H21|` over the band bins, concatenated in board order.
    pub spectra: Vec<f64>,
    pub height_cm: f64,
}

/// `|H21|` of every board restricted to `band`; invalid estimates inside the
/// band are reported by bin index.
pub fn featurize(
    pairs: &[SensorPair],
    band: &FrequencyBand,
    welch: &WelchConfig,
    height_cm: f64,
) -> Result<FeatureVector> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::InvalidInput("no sensor pairs to featurize".into()))?;
    band.validate_for_rate(first.near.rate_hz())?;
    let est = Welch::new(*welch, first.near.rate_hz())?;
    let bins = welch.band_bins(first.near.rate_hz(), band);
    if bins.is_empty() {
        return Err(Error::InvalidInput(format!("band {band} contains no frequency bins")));
    }
    let mut spectra = Vec::with_capacity(bins.len() * pairs.len());
    for p in pairs {
        let t = est.transfer(&p.near, &p.far)?;
        let bad: Vec<usize> = bins.iter().copied().filter(|&k| !t.valid[k]).collect();
        if !bad.is_empty() {
            return Err(Error::InvalidBins { bins: bad });
        }
        spectra.extend(bins.iter().map(|&k| t.h21[k].norm()));
    }
    Ok(FeatureVector { spectra, height_cm })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub index: usize,
    pub subject_id: String,
    pub subject_index: usize,
    pub height_cm: f64,
    pub body_mass_kg: f64,
    pub level: usize,
    pub added_mass_kg: f64,
    /// Body plus added mass.
    pub true_mass_kg: f64,
    pub repetition: usize,
    pub seed: u64,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub bed: BedSpec,
    pub cohort: Vec<SubjectProfile>,
    pub trial: TrialConfig,
    pub band: FrequencyBand,
    pub band_report: Option<BandReport>,
    pub welch: WelchConfig,
    pub board_feature_len: usize,
    pub feature_len: usize,
    pub record_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<SampleRecord>,
}

/// `(subject, level)` groups in record order.
fn groups(cohort_len: usize, levels: usize) -> Vec<(usize, usize)> {
    (0..cohort_len).flat_map(|s| (0..levels).map(move |l| (s, l))).collect()
}

fn trial_seed(master: u64, subject: usize, level: usize, rep: usize) -> u64 {
    par::derive_seed(master, &[subject as u64, level as u64, rep as u64])
}

/// Stream tag separating extra-noise draws from the base trial noise.
const EXTRA_NOISE_STREAM: u64 = 0x6e_6f69_7365;

/// Simulates every subject × level × repetition trial and featurizes it
/// over `band`. Records are ordered by subject, level, then repetition.
pub fn build_dataset(
    bed: &BedSpec,
    cohort: &[SubjectProfile],
    trial: &TrialConfig,
    band: &FrequencyBand,
    welch: &WelchConfig,
) -> Result<Dataset> {
    if cohort.is_empty() {
        return Err(Error::InvalidInput("cohort must not be empty".into()));
    }
    for s in cohort {
        s.validate()?;
    }
    trial.validate()?;
    bed.validate()?;
    welch.validate()?;
    let excitation = trial.excitation.synth()?;
    band.validate_for_rate(excitation.rate_hz())?;
    let sim = TrialSimulator::new(bed, &excitation)?;
    let plan = groups(cohort.len(), trial.added_masses.len());
    log::info!(
        "simulating {} trials on the {} bed",
        plan.len() * trial.repetitions,
        bed.name
    );
    let nested = par::try_map(&plan, |&(s, l)| {
        let subject = &cohort[s];
        let added = trial.added_masses[l];
        let clean = sim.clean(subject, added)?;
        (0..trial.repetitions)
            .map(|r| {
                let seed = trial_seed(trial.seed, s, l, r);
                let pairs = add_sensor_noise(&clean, trial.noise_pct, seed, NOISE_FLOOR);
                let fv = featurize(&pairs, band, welch, subject.height_cm)?;
                Ok(SampleRecord {
                    index: 0,
                    subject_id: subject.id.clone(),
                    subject_index: s,
                    height_cm: subject.height_cm,
                    body_mass_kg: subject.mass_kg,
                    level: l,
                    added_mass_kg: added,
                    true_mass_kg: subject.mass_kg + added,
                    repetition: r,
                    seed,
                    features: fv.spectra,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut records: Vec<SampleRecord> = nested.into_iter().flatten().collect();
    for (i, r) in records.iter_mut().enumerate() {
        r.index = i;
    }
    let feature_len = records[0].features.len();
    let manifest = Manifest {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        bed: bed.clone(),
        cohort: cohort.to_vec(),
        trial: trial.clone(),
        band: *band,
        band_report: None,
        welch: *welch,
        board_feature_len: feature_len / bed.boards.len(),
        feature_len,
        record_count: records.len(),
    };
    Ok(Dataset { manifest, records })
}

impl Dataset {
    pub fn subject_count(&self) -> usize {
        self.manifest.cohort.len()
    }

    pub fn level_count(&self) -> usize {
        self.manifest.trial.added_masses.len()
    }

    /// Re-simulates every record from its seed, adds `extra_noise_pct` on
    /// top of the base noise, and re-featurizes over `band`. With zero
    /// extra noise and the original band the features are reproduced
    /// bit for bit.
    pub fn refeaturize(&self, band: &FrequencyBand, extra_noise_pct: f64) -> Result<Dataset> {
        if !(extra_noise_pct.is_finite() && extra_noise_pct >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "noise percentage must be >= 0, got {extra_noise_pct}"
            )));
        }
        let m = &self.manifest;
        let excitation = m.trial.excitation.synth()?;
        band.validate_for_rate(excitation.rate_hz())?;
        let sim = TrialSimulator::new(&m.bed, &excitation)?;
        let mut by_group: Vec<Vec<&SampleRecord>> = vec![Vec::new(); m.cohort.len() * m.trial.added_masses.len()];
        for r in &self.records {
            let g = r.subject_index * m.trial.added_masses.len() + r.level;
            by_group
                .get_mut(g)
                .ok_or_else(|| {
                    Error::InvalidInput(format!("record {} refers to an unknown subject or level", r.index))
                })?
                .push(r);
        }
        let plan: Vec<usize> = (0..by_group.len()).filter(|&g| !by_group[g].is_empty()).collect();
        let nested = par::try_map(&plan, |&g| {
            let first = by_group[g][0];
            let subject = &m.cohort[first.subject_index];
            let clean = sim.clean(subject, m.trial.added_masses[first.level])?;
            by_group[g]
                .iter()
                .map(|r| {
                    let mut pairs = add_sensor_noise(&clean, m.trial.noise_pct, r.seed, NOISE_FLOOR);
                    if extra_noise_pct > 0.0 {
                        let extra = par::derive_seed(r.seed, &[EXTRA_NOISE_STREAM]);
                        pairs = add_sensor_noise(&pairs, extra_noise_pct, extra, 0.0);
                    }
                    let fv = featurize(&pairs, band, &m.welch, r.height_cm)?;
                    Ok(SampleRecord {
                        features: fv.spectra,
                        ..(*r).clone()
                    })
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut records: Vec<SampleRecord> = nested.into_iter().flatten().collect();
        records.sort_by_key(|r| r.index);
        let feature_len = records.first().map_or(0, |r| r.features.len());
        let manifest = Manifest {
            band: *band,
            board_feature_len: feature_len / m.bed.boards.len(),
            feature_len,
            record_count: records.len(),
            ..m.clone()
        };
        Ok(Dataset { manifest, records })
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let ser = |e: serde_json::Error| Error::InvalidInput(format!("serialization failed: {e}"));
        let mut out = jsonl::to_line(&self.manifest).map_err(ser)?;
        out.push('\n');
        for r in &self.records {
            out.push_str(&jsonl::to_line(r).map_err(ser)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = self.to_jsonl()?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(text.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Dataset> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let bad = |line: usize, message: String| Error::Format {
            path: path.to_path_buf(),
            message: format!("line {line}: {message}"),
        };
        let mut lines = BufReader::new(file).lines();
        let head = lines
            .next()
            .ok_or_else(|| bad(1, "empty file".into()))?
            .map_err(|e| Error::io(path, e))?;
        let manifest: Manifest = jsonl::from_str(&head).map_err(|e| bad(1, e.to_string()))?;
        if manifest.format != FORMAT_NAME || manifest.version != FORMAT_VERSION {
            return Err(bad(
                1,
                format!("unsupported format {} v{}", manifest.format, manifest.version),
            ));
        }
        let mut records = Vec::with_capacity(manifest.record_count);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: SampleRecord = jsonl::from_str(&line).map_err(|e| bad(i + 2, e.to_string()))?;
            if r.features.len() != manifest.feature_len {
                return Err(bad(
                    i + 2,
                    format!("{} features, manifest says {}", r.features.len(), manifest.feature_len),
                ));
            }
            records.push(r);
        }
        if records.len() != manifest.record_count {
            return Err(bad(
                1,
                format!("{} records, manifest says {}", records.len(), manifest.record_count),
            ));
        }
        Ok(Dataset { manifest, records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{transfer_estimate, welch_psd};
    use crate::excitation::ChirpConfig;
    use crate::plate::{modal_coefficients, ModeIndex};

    fn subject(h: f64, m: f64) -> SubjectProfile {
        SubjectProfile {
            id: "T".into(),
            height_cm: h,
            mass_kg: m,
        }
    }

    fn short_excitation(band: FrequencyBand, secs: f64) -> ExcitationSpec {
        ExcitationSpec {
            duration_s: secs,
            ..ExcitationSpec::for_band(band, 7)
        }
    }

    fn wood_band() -> FrequencyBand {
        FrequencyBand::new(500.0, 900.0).unwrap()
    }

    #[test]
    fn patch_rule() {
        let plate = PlateSpec::bed_deck();
        let p = height_to_patch(170.0, &plate, &PatchModel::default()).unwrap();
        assert!((p.extent_x - 1.53).abs() < 1e-12);
        assert!((p.extent_y - 0.4 * 1.22).abs() < 1e-12);
        let mut last = 0.0;
        for h in [140.0, 150.0, 170.0, 190.0, 200.0] {
            let s = height_to_patch(h, &plate, &PatchModel::default()).unwrap().area();
            assert!(s > last);
            last = s;
        }
        let clamped = height_to_patch(400.0, &plate, &PatchModel::default()).unwrap();
        assert!((clamped.extent_x - 0.95 * 2.44).abs() < 1e-12);
        clamped.validate(&plate).unwrap();
        assert!(height_to_patch(0.0, &plate, &PatchModel::default()).is_err());
    }

    #[test]
    fn contact_area_changes_c3() {
        let plate = PlateSpec::bed_deck();
        let mode = ModeIndex::new(1, 1).unwrap();
        let c = |h| {
            modal_coefficients(
                &plate,
                mode,
                &height_to_patch(h, &plate, &PatchModel::default()).unwrap(),
            )
            .unwrap()
            .c3
        };
        assert!((c(180.0) - c(150.0)).abs() > 1e-3 * c(150.0));
    }

    #[test]
    fn cohort_defaults() {
        let c = generate_cohort(&CohortSpec::default(), 1).unwrap();
        assert_eq!(c.len(), 11);
        assert_eq!(c[0].id, "P01");
        for s in &c {
            assert!((150.0..=185.0).contains(&s.height_cm));
            assert!((40.0..=120.0).contains(&s.mass_kg));
        }
        assert_eq!(c, generate_cohort(&CohortSpec::default(), 1).unwrap());
        assert_ne!(c, generate_cohort(&CohortSpec::default(), 2).unwrap());
    }

    #[test]
    fn presets_are_valid() {
        for b in [BedSpec::wooden(), BedSpec::steel(), BedSpec::desk()] {
            b.validate().unwrap();
        }
        let mut b = BedSpec::wooden();
        b.boards[0].load_fraction = 1.5;
        assert!(b.validate().is_err());
    }

    #[test]
    fn added_mass_changes_far_spectrum() {
        let bed = BedSpec::wooden();
        let x = short_excitation(wood_band(), 2.0).synth().unwrap();
        let s = subject(170.0, 65.0);
        let cfg = WelchConfig::default();
        let a = simulate_trial(&bed, &s, 0.0, &x, 2.0, 5).unwrap();
        let b = simulate_trial(&bed, &s, 5.0, &x, 2.0, 5).unwrap();
        let pa = welch_psd(&a[0].far, &cfg).unwrap();
        let pb = welch_psd(&b[0].far, &cfg).unwrap();
        let bins = cfg.band_bins(25_600.0, &wood_band());
        let diff: f64 = bins.iter().map(|&k| (pa.density[k] - pb.density[k]).abs()).sum();
        // Noise floor: two repetitions at the same mass.
        let c = simulate_trial(&bed, &s, 0.0, &x, 2.0, 6).unwrap();
        let pc = welch_psd(&c[0].far, &cfg).unwrap();
        let noise: f64 = bins.iter().map(|&k| (pa.density[k] - pc.density[k]).abs()).sum();
        assert!(diff > 3.0 * noise, "{diff} vs {noise}");
    }

    #[test]
    fn chirp_trial_matches_theoretical_transfer() {
        let bed = BedSpec::wooden();
        let s = subject(170.0, 65.0);
        let x = ChirpConfig::default().synth().unwrap();
        let pairs = simulate_trial(&bed, &s, 0.0, &x, 0.0, 1).unwrap();
        let cfg = WelchConfig::default();
        let t = transfer_estimate(&pairs[0].near, &pairs[0].far, &cfg).unwrap();
        let b = &bed.boards[0];
        let probe = bed.subject_probe(s.height_cm).unwrap();
        let band = FrequencyBand::new(470.0, 690.0).unwrap();
        let bins = cfg.band_bins(25_600.0, &band);
        let grid: Vec<f64> = bins.iter().map(|&k| t.freq_hz[k]).collect();
        let theory = crate::plate::theoretical_transfer(
            &b.plate,
            &crate::plate::BodyLoad::new(s.mass_kg, probe.patch),
            probe.source,
            probe.sensor,
            &grid,
            bed.mode_cap,
        )
        .unwrap();
        let (mut e2, mut r2) = (0.0, 0.0);
        for (k, th) in bins.iter().zip(&theory) {
            e2 += (t.h21[*k].norm() - th).powi(2);
            r2 += th * th;
        }
        let rel = (e2 / r2).sqrt();
        assert!(rel < 0.05, "{rel}");
    }

    #[test]
    fn silent_excitation_gives_pure_noise() {
        let bed = BedSpec::wooden();
        let x = TimeSeries::new(25_600.0, vec![0.0; 8192]).unwrap();
        let pairs = simulate_trial(&bed, &subject(170.0, 65.0), 0.0, &x, 5.0, 3).unwrap();
        for p in &pairs {
            for s in [&p.near, &p.far] {
                assert!(s.rms() > 0.0 && (s.rms() - NOISE_FLOOR).abs() < 0.05 * NOISE_FLOOR);
            }
        }
    }

    #[test]
    fn feature_widths() {
        let cfg = WelchConfig::default();
        let s = subject(170.0, 65.0);
        let x = short_excitation(wood_band(), 1.0).synth().unwrap();
        let wood = simulate_trial(&BedSpec::wooden(), &s, 0.0, &x, 2.0, 1).unwrap();
        assert_eq!(featurize(&wood, &wood_band(), &cfg, 170.0).unwrap().spectra.len(), 128);
        let steel_band = FrequencyBand::new(500.0, 800.0).unwrap();
        let y = short_excitation(steel_band, 1.0).synth().unwrap();
        let steel = simulate_trial(&BedSpec::steel(), &s, 0.0, &y, 2.0, 1).unwrap();
        assert_eq!(featurize(&steel, &steel_band, &cfg, 170.0).unwrap().spectra.len(), 384);
    }

    #[test]
    fn features_invariant_to_sensor_scaling() {
        let cfg = WelchConfig::default();
        let x = short_excitation(wood_band(), 1.0).synth().unwrap();
        let pairs = simulate_trial(&BedSpec::wooden(), &subject(160.0, 55.0), 2.0, &x, 2.0, 9).unwrap();
        let scaled: Vec<SensorPair> = pairs
            .iter()
            .map(|p| SensorPair {
                near: p.near.scaled(3.0),
                far: p.far.scaled(3.0),
            })
            .collect();
        let a = featurize(&pairs, &wood_band(), &cfg, 160.0).unwrap();
        let b = featurize(&scaled, &wood_band(), &cfg, 160.0).unwrap();
        for (u, v) in a.spectra.iter().zip(&b.spectra) {
            assert!((u - v).abs() <= 1e-10 * u.abs());
        }
        // End to end: a louder excitation leaves the features unchanged up to
        // the absolute noise floor, which does not scale with the drive.
        let loud = simulate_trial(&BedSpec::wooden(), &subject(160.0, 55.0), 2.0, &x.scaled(4.0), 2.0, 9).unwrap();
        let c = featurize(&loud, &wood_band(), &cfg, 160.0).unwrap();
        for (u, v) in a.spectra.iter().zip(&c.spectra) {
            assert!((u - v).abs() <= 1e-6 * u.abs(), "{u} {v}");
        }
    }

    #[test]
    fn invalid_band_bins_are_listed() {
        let cfg = WelchConfig::default();
        // Excitation silent below 500 Hz and noise-free: those bins fall under the PSD floor.
        let x = short_excitation(wood_band(), 1.0).synth().unwrap();
        let pairs = simulate_trial(&BedSpec::wooden(), &subject(160.0, 55.0), 0.0, &x, 0.0, 1).unwrap();
        let err = featurize(&pairs, &FrequencyBand::new(5000.0, 5100.0).unwrap(), &cfg, 160.0).unwrap_err();
        match err {
            Error::InvalidBins { bins } => assert!(!bins.is_empty() && bins.iter().all(|&k| (1600..1632).contains(&k))),
            other => panic!("{other:?}"),
        }
    }

    fn tiny_trial(reps: usize, masses: Vec<f64>) -> TrialConfig {
        TrialConfig {
            repetitions: reps,
            added_masses: masses,
            ..TrialConfig::new(short_excitation(wood_band(), 1.0), 11)
        }
    }

    #[test]
    fn one_record_dataset() {
        let ds = build_dataset(
            &BedSpec::wooden(),
            &[subject(170.0, 70.0)],
            &tiny_trial(1, vec![0.0]),
            &wood_band(),
            &WelchConfig::default(),
        )
        .unwrap();
        assert_eq!(ds.records.len(), 1);
        assert_eq!(ds.manifest.feature_len, 128);
        assert!(build_dataset(
            &BedSpec::wooden(),
            &[],
            &tiny_trial(1, vec![0.0]),
            &wood_band(),
            &WelchConfig::default()
        )
        .is_err());
    }

    #[test]
    fn dataset_file_is_deterministic_and_round_trips() {
        let cohort = generate_cohort(
            &CohortSpec {
                count: 2,
                ..CohortSpec::default()
            },
            3,
        )
        .unwrap();
        let build = || {
            build_dataset(
                &BedSpec::wooden(),
                &cohort,
                &tiny_trial(2, vec![0.0, 5.0]),
                &wood_band(),
                &WelchConfig::default(),
            )
            .unwrap()
        };
        let a = build();
        assert_eq!(a.records.len(), 8);
        assert!(a.records.iter().enumerate().all(|(i, r)| r.index == i));
        let dir = tempfile::tempdir().unwrap();
        let (pa, pb) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        a.write(&pa).unwrap();
        build().write(&pb).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
        assert_eq!(Dataset::read(&pa).unwrap(), a);
        // Fields are written with 17 significant digits.
        let text = std::fs::read_to_string(&pa).unwrap();
        assert!(text.lines().nth(1).unwrap().contains("\"height_cm\":1."));
        std::fs::write(&pb, "not json\n").unwrap();
        assert!(matches!(Dataset::read(&pb), Err(Error::Format { .. })));
        assert!(matches!(
            Dataset::read(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn refeaturize_at_zero_noise_reproduces_features() {
        let cohort = generate_cohort(
            &CohortSpec {
                count: 2,
                ..CohortSpec::default()
            },
            4,
        )
        .unwrap();
        let ds = build_dataset(
            &BedSpec::wooden(),
            &cohort,
            &tiny_trial(2, vec![0.0, 3.0]),
            &wood_band(),
            &WelchConfig::default(),
        )
        .unwrap();
        assert_eq!(ds.refeaturize(&wood_band(), 0.0).unwrap(), ds);
        let noisy = ds.refeaturize(&wood_band(), 10.0).unwrap();
        assert_ne!(noisy.records[0].features, ds.records[0].features);
        let other = ds.refeaturize(&FrequencyBand::new(500.0, 800.0).unwrap(), 0.0).unwrap();
        assert_eq!(other.manifest.feature_len, 96);
    }

    #[test]
    fn mass_effect_exceeds_repetition_noise() {
        let bed = BedSpec::wooden();
        let band = FrequencyBand::new(470.0, 690.0).unwrap();
        let x = short_excitation(band, 2.0).synth().unwrap();
        let sim = TrialSimulator::new(&bed, &x).unwrap();
        let cfg = WelchConfig::default();
        let s = subject(172.0, 68.0);
        for pct in [2.0, 10.0] {
            let feat = |added: f64, seed: u64| {
                featurize(&sim.simulate(&s, added, pct, seed).unwrap(), &band, &cfg, s.height_cm)
                    .unwrap()
                    .spectra
            };
            let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).abs()).sum::<f64>() / a.len() as f64;
            let base = feat(0.0, 1);
            let rep = dist(&base, &feat(0.0, 2));
            let heavier = dist(&base, &feat(5.0, 1));
            assert!(heavier > rep, "noise {pct}%: {heavier} vs {rep}");
        }
    }
}
