//! Cross-validation protocols, accuracy metrics, baselines and robustness
//! sweeps over a synthesized dataset.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SampleRecord};
use crate::dsp::FrequencyBand;
use crate::error::{Error, Result};
use crate::pinn::{self, Architecture, Model, Samples, TrainConfig};
use crate::{jsonl, par};

/// Share of the non-test pool held out for restart selection.
pub const VALIDATION_FRACTION: f64 = 0.2;
pub const WITHIN_10_PCT: f64 = 10.0;
pub const WITHIN_20_PCT: f64 = 20.0;
/// Minimum share of estimates within 10 % of truth.
pub const CLINICAL_10_SHARE: f64 = 0.70;
/// Minimum share of estimates within 20 % of truth.
pub const CLINICAL_20_SHARE: f64 = 0.95;
/// Absolute slack (in percent) so that an error of exactly 10 % counts as
/// within 10 % despite rounding in the percentage itself.
pub const BOUNDARY_SLACK_PCT: f64 = 1e-9;
pub const DEFAULT_NOISE_LEVELS: [f64; 6] = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Leave one person out.
    Lopo,
    /// Leave one (person, weight level) out.
    Lowo,
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lopo" => Ok(Protocol::Lopo),
            "lowo" => Ok(Protocol::Lowo),
            other => Err(Error::InvalidInput(format!(
                "unknown protocol {other:?} (expected lopo or lowo)"
            ))),
        }
    }
}

/// One fold: record indices (into `Dataset::records`) per role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fold: usize,
    pub protocol: Protocol,
    pub label: String,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

fn split_pool(mut pool: Vec<usize>, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if pool.len() < 2 {
        return Err(Error::InvalidInput(
            "need at least two records outside the test set".into(),
        ));
    }
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((pool.len() as f64 * VALIDATION_FRACTION).round() as usize).clamp(1, pool.len() - 1);
    let mut val = pool.split_off(pool.len() - n_val);
    pool.sort_unstable();
    val.sort_unstable();
    Ok((pool, val))
}

fn make_splits(
    ds: &Dataset,
    protocol: Protocol,
    seed: u64,
    key: impl Fn(&SampleRecord) -> (usize, usize),
) -> Result<Vec<SplitPlan>> {
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, r) in ds.records.iter().enumerate() {
        groups.entry(key(r)).or_default().push(i);
    }
    groups
        .into_iter()
        .enumerate()
        .map(|(fold, ((s, l), test))| {
            let pool = (0..ds.records.len())
                .filter(|i| key(&ds.records[*i]) != (s, l))
                .collect();
            let (train, validation) = split_pool(pool, par::derive_seed(seed, &[fold as u64]))?;
            let subject = &ds.records[test[0]].subject_id;
            let label = match protocol {
                Protocol::Lopo => subject.clone(),
                Protocol::Lowo => format!("{subject}/L{l}"),
            };
            Ok(SplitPlan {
                fold,
                protocol,
                label,
                train,
                validation,
                test,
            })
        })
        .collect()
}

/// One fold per subject; the other subjects' records are split 80/20 into
/// training and validation by a seeded shuffle.
pub fn lopo_splits(ds: &Dataset, seed: u64) -> Result<Vec<SplitPlan>> {
    if ds.subject_count() < 2 {
        return Err(Error::InvalidInput(
            "leave-one-person-out needs at least two subjects".into(),
        ));
    }
    make_splits(ds, Protocol::Lopo, seed, |r| (r.subject_index, 0))
}

/// One fold per (subject, weight level); the same subject's other levels stay
/// in the training pool.
pub fn lowo_splits(ds: &Dataset, seed: u64) -> Result<Vec<SplitPlan>> {
    if ds.level_count() < 2 {
        return Err(Error::InvalidInput(
            "leave-one-weight-out needs at least two weight levels".into(),
        ));
    }
    make_splits(ds, Protocol::Lowo, seed, |r| (r.subject_index, r.level))
}

pub fn splits(ds: &Dataset, protocol: Protocol, seed: u64) -> Result<Vec<SplitPlan>> {
    match protocol {
        Protocol::Lopo => lopo_splits(ds, seed),
        Protocol::Lowo => lowo_splits(ds, seed),
    }
}

/// One test-set estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordPrediction {
    pub fold: usize,
    pub record: usize,
    pub subject_id: String,
    pub level: usize,
    pub truth_kg: f64,
    pub predicted_kg: f64,
}

impl RecordPrediction {
    pub fn abs_error_kg(&self) -> f64 {
        (self.predicted_kg - self.truth_kg).abs()
    }

    /// Absolute error over the true total mass, in percent.
    pub fn pct_error(&self) -> f64 {
        100.0 * self.abs_error_kg() / self.truth_kg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub fold: usize,
    pub count: usize,
    pub mae_kg: f64,
    pub mae_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub count: usize,
    pub mae_kg: f64,
    pub mae_pct: f64,
    /// Per-record percentage errors, in prediction order.
    pub pct_errors: Vec<f64>,
    pub within_10: f64,
    pub within_20: f64,
    pub clinical_pass: bool,
    pub folds: Vec<FoldMetrics>,
}

fn within(pct: &[f64], threshold: f64) -> f64 {
    pct.iter().filter(|&&p| p <= threshold + BOUNDARY_SLACK_PCT).count() as f64 / pct.len() as f64
}

impl MetricsReport {
    /// Aggregates predictions in the given order; the result depends only on
    /// the prediction values and their order.
    pub fn from_predictions(preds: &[RecordPrediction]) -> Result<Self> {
        if preds.is_empty() {
            return Err(Error::InvalidInput("no predictions to evaluate".into()));
        }
        if let Some(p) = preds
            .iter()
            .find(|p| !p.predicted_kg.is_finite() || !(p.truth_kg > 0.0))
        {
            return Err(Error::NonFinite {
                what: format!("prediction for record {}", p.record),
            });
        }
        let n = preds.len() as f64;
        let pct_errors: Vec<f64> = preds.iter().map(RecordPrediction::pct_error).collect();
        let mut by_fold: BTreeMap<usize, (usize, f64, f64)> = BTreeMap::new();
        for (p, pct) in preds.iter().zip(&pct_errors) {
            let e = by_fold.entry(p.fold).or_default();
            e.0 += 1;
            e.1 += p.abs_error_kg();
            e.2 += pct;
        }
        let within_10 = within(&pct_errors, WITHIN_10_PCT);
        let within_20 = within(&pct_errors, WITHIN_20_PCT);
        Ok(MetricsReport {
            count: preds.len(),
            mae_kg: preds.iter().map(RecordPrediction::abs_error_kg).sum::<f64>() / n,
            mae_pct: pct_errors.iter().sum::<f64>() / n,
            within_10,
            within_20,
            clinical_pass: within_10 >= CLINICAL_10_SHARE && within_20 >= CLINICAL_20_SHARE,
            pct_errors,
            folds: by_fold
                .into_iter()
                .map(|(fold, (c, e, p))| FoldMetrics {
                    fold,
                    count: c,
                    mae_kg: e / c as f64,
                    mae_pct: p / c as f64,
                })
                .collect(),
        })
    }

    pub fn summary(&self) -> String {
        format!(
            "records {}  MAE {:.3} kg ({:.2} %)  within 10 %: {:.1} %  within 20 %: {:.1} %  clinical: {}",
            self.count,
            self.mae_kg,
            self.mae_pct,
            100.0 * self.within_10,
            100.0 * self.within_20,
            if self.clinical_pass { "pass" } else { "fail" }
        )
    }
}

fn records_at<'a>(ds: &'a Dataset, idx: &[usize]) -> Vec<&'a SampleRecord> {
    idx.iter().map(|&i| &ds.records[i]).collect()
}

fn check_split(ds: &Dataset, split: &SplitPlan) -> Result<()> {
    let n = ds.records.len();
    if split.test.is_empty() || split.train.is_empty() || split.validation.is_empty() {
        return Err(Error::InvalidInput(format!("fold {} has an empty role", split.fold)));
    }
    if let Some(&i) = split
        .train
        .iter()
        .chain(&split.validation)
        .chain(&split.test)
        .find(|&&i| i >= n)
    {
        return Err(Error::InvalidInput(format!(
            "fold {} references record {i} of {n}",
            split.fold
        )));
    }
    Ok(())
}

/// Test-set predictions of one model per fold, in fold then record order.
pub fn predict_folds(ds: &Dataset, splits: &[SplitPlan], models: &[Model]) -> Result<Vec<RecordPrediction>> {
    if models.len() != splits.len() {
        return Err(Error::InvalidInput(format!(
            "{} models for {} folds; every test record needs a prediction",
            models.len(),
            splits.len()
        )));
    }
    let mut out = Vec::new();
    for (split, model) in splits.iter().zip(models) {
        check_split(ds, split)?;
        let recs = records_at(ds, &split.test);
        let pred = model.predict(&Samples::from_records(&recs)?)?;
        out.extend(
            split
                .test
                .iter()
                .zip(recs)
                .zip(pred)
                .map(|((&i, r), p)| RecordPrediction {
                    fold: split.fold,
                    record: i,
                    subject_id: r.subject_id.clone(),
                    level: r.level,
                    truth_kg: r.true_mass_kg,
                    predicted_kg: p,
                }),
        );
    }
    Ok(out)
}

pub fn evaluate(
    ds: &Dataset,
    splits: &[SplitPlan],
    models: &[Model],
) -> Result<(MetricsReport, Vec<RecordPrediction>)> {
    let preds = predict_folds(ds, splits, models)?;
    Ok((MetricsReport::from_predictions(&preds)?, preds))
}

/// Outcome of training and testing one model per fold.
#[derive(Debug, Clone)]
pub struct CvResult {
    pub models: Vec<Model>,
    pub predictions: Vec<RecordPrediction>,
    pub report: MetricsReport,
}

/// Trains one network per fold. The fold seed is derived from `cfg.seed`, so
/// folds are independent and may run concurrently.
pub fn train_folds(
    ds: &Dataset,
    splits: &[SplitPlan],
    template: &Architecture,
    cfg: &TrainConfig,
) -> Result<Vec<Model>> {
    let arch = Architecture {
        input_width: ds.manifest.feature_len,
        ..template.clone()
    };
    par::try_map(splits, |split| {
        check_split(ds, split)?;
        let train = Samples::from_records(&records_at(ds, &split.train))?;
        let val = Samples::from_records(&records_at(ds, &split.validation))?;
        let fold_cfg = TrainConfig {
            seed: par::derive_seed(cfg.seed, &[split.fold as u64]),
            ..cfg.clone()
        };
        let model = pinn::train(&train, &val, &arch, &fold_cfg)?;
        log::info!("fold {} ({}) trained", split.fold, split.label);
        Ok(model)
    })
}

/// Trains one network per fold and scores each on its test records.
pub fn cross_validate(
    ds: &Dataset,
    splits: &[SplitPlan],
    template: &Architecture,
    cfg: &TrainConfig,
) -> Result<CvResult> {
    let models = train_folds(ds, splits, template, cfg)?;
    let (report, predictions) = evaluate(ds, splits, &models)?;
    Ok(CvResult {
        models,
        predictions,
        report,
    })
}

/// `weight = alpha · height + beta` by ordinary least squares.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightBaseline {
    pub alpha: f64,
    pub beta: f64,
}

/// Relative height spread below which the fit is degenerate.
const HEIGHT_DEGENERACY: f64 = 1e-12;

impl HeightBaseline {
    pub fn predict(&self, height_cm: f64) -> f64 {
        self.alpha * height_cm + self.beta
    }
}

pub fn height_only_baseline(records: &[&SampleRecord]) -> Result<HeightBaseline> {
    let n = records.len() as f64;
    let mx = records.iter().map(|r| r.height_cm).sum::<f64>() / n;
    let my = records.iter().map(|r| r.true_mass_kg).sum::<f64>() / n;
    let sxx: f64 = records.iter().map(|r| (r.height_cm - mx).powi(2)).sum();
    let sxy: f64 = records.iter().map(|r| (r.height_cm - mx) * (r.true_mass_kg - my)).sum();
    if records.len() < 2 || !(sxx > HEIGHT_DEGENERACY * n * mx * mx) {
        return Err(Error::InvalidInput(
            "height-only baseline needs at least two distinct heights".into(),
        ));
    }
    let alpha = sxy / sxx;
    Ok(HeightBaseline {
        alpha,
        beta: my - alpha * mx,
    })
}

/// Fits the baseline on each fold's full non-test pool and tests it.
pub fn evaluate_height_baseline(ds: &Dataset, splits: &[SplitPlan]) -> Result<(MetricsReport, Vec<RecordPrediction>)> {
    let mut preds = Vec::new();
    for split in splits {
        check_split(ds, split)?;
        let mut pool = split.train.clone();
        pool.extend(&split.validation);
        let fit = height_only_baseline(&records_at(ds, &pool))?;
        preds.extend(split.test.iter().map(|&i| {
            let r = &ds.records[i];
            RecordPrediction {
                fold: split.fold,
                record: i,
                subject_id: r.subject_id.clone(),
                level: r.level,
                truth_kg: r.true_mass_kg,
                predicted_kg: fit.predict(r.height_cm),
            }
        }));
    }
    Ok((MetricsReport::from_predictions(&preds)?, preds))
}

/// Network with the height branch removed.
pub fn vibration_only_ablation(
    ds: &Dataset,
    splits: &[SplitPlan],
    template: &Architecture,
    cfg: &TrainConfig,
) -> Result<CvResult> {
    let arch = Architecture {
        use_height: false,
        ..template.clone()
    };
    cross_validate(ds, splits, &arch, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevelReport {
    pub extra_noise_pct: f64,
    pub report: MetricsReport,
}

/// Re-simulates the sensor records with extra noise at each level before the
/// transfer estimate, then cross-validates with the same folds.
pub fn noise_robustness_sweep(
    ds: &Dataset,
    levels: &[f64],
    splits: &[SplitPlan],
    template: &Architecture,
    cfg: &TrainConfig,
) -> Result<Vec<NoiseLevelReport>> {
    levels
        .iter()
        .map(|&pct| {
            let noisy = ds.refeaturize(&ds.manifest.band, pct)?;
            let cv = cross_validate(&noisy, splits, template, cfg)?;
            log::info!("extra noise {pct} %: {}", cv.report.summary());
            Ok(NoiseLevelReport {
                extra_noise_pct: pct,
                report: cv.report,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReportEntry {
    pub band: FrequencyBand,
    pub feature_len: usize,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandComparison {
    pub entries: Vec<BandReportEntry>,
    /// Index of the lowest-MAE band (first on ties).
    pub best: usize,
}

/// Re-featurizes the same records over each candidate band and
/// cross-validates with the same folds.
pub fn band_feature_comparison(
    ds: &Dataset,
    bands: &[FrequencyBand],
    splits: &[SplitPlan],
    template: &Architecture,
    cfg: &TrainConfig,
) -> Result<BandComparison> {
    if bands.is_empty() {
        return Err(Error::InvalidInput(
            "band comparison needs at least one candidate band".into(),
        ));
    }
    let entries = bands
        .iter()
        .map(|band| {
            let view = ds.refeaturize(band, 0.0)?;
            let cv = cross_validate(&view, splits, template, cfg)?;
            log::info!("band {band:?}: {}", cv.report.summary());
            Ok(BandReportEntry {
                band: *band,
                feature_len: view.manifest.feature_len,
                report: cv.report,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = entries.iter().enumerate().fold(0, |b, (i, e)| {
        if e.report.mae_kg < entries[b].report.mae_kg {
            i
        } else {
            b
        }
    });
    Ok(BandComparison { entries, best })
}

/// One JSON object per line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&jsonl::to_line(item).map_err(|e| Error::InvalidInput(format!("serialization: {e}")))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    std::fs::write(path, to_jsonl(items)?).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<RecordPrediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            jsonl::from_str(l).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}

/// `record,subject,level,fold,truth_kg,predicted_kg,pct_error` rows.
pub fn predictions_csv(preds: &[RecordPrediction]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
    w.write_record([
        "record",
        "subject",
        "level",
        "fold",
        "truth_kg",
        "predicted_kg",
        "pct_error",
    ])
    .map_err(csv_err)?;
    for p in preds {
        w.write_record([
            p.record.to_string(),
            p.subject_id.clone(),
            p.level.to_string(),
            p.fold.to_string(),
            p.truth_kg.to_string(),
            p.predicted_kg.to_string(),
            p.pct_error().to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv of UTF-8 fields"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{BedSpec, CohortSpec, ExcitationSpec, TrialConfig};
    use crate::dsp::WelchConfig;
    use proptest::prelude::*;

    fn record(i: usize, subject: usize, level: usize, height: f64, mass: f64) -> SampleRecord {
        SampleRecord {
            index: i,
            subject_id: format!("P{:02}", subject + 1),
            subject_index: subject,
            height_cm: height,
            body_mass_kg: mass,
            level,
            added_mass_kg: 0.0,
            true_mass_kg: mass,
            repetition: 0,
            seed: 0,
            features: vec![mass / 100.0, 1.0],
        }
    }

    /// Skeleton dataset: manifest from a tiny real build, records replaced.
    fn fake_dataset(subjects: usize, levels: usize, reps: usize) -> Dataset {
        let mut ds = tiny_dataset(2, 2, 1);
        ds.records.clear();
        for s in 0..subjects {
            for l in 0..levels {
                for _ in 0..reps {
                    let i = ds.records.len();
                    ds.records
                        .push(record(i, s, l, 150.0 + s as f64, 50.0 + 5.0 * l as f64 + s as f64));
                }
            }
        }
        ds.manifest.record_count = ds.records.len();
        ds.manifest.feature_len = 2;
        ds.manifest.cohort = (0..subjects)
            .map(|s| crate::dataset::SubjectProfile {
                id: format!("P{:02}", s + 1),
                height_cm: 150.0 + s as f64,
                mass_kg: 50.0,
            })
            .collect();
        ds.manifest.trial.added_masses = (0..levels).map(|l| l as f64).collect();
        ds
    }

    fn tiny_dataset(subjects: usize, levels: usize, reps: usize) -> Dataset {
        let bed = BedSpec::wooden();
        let cohort = crate::dataset::generate_cohort(
            &CohortSpec {
                count: subjects,
                ..CohortSpec::default()
            },
            1,
        )
        .unwrap();
        let band = FrequencyBand::new(500.0, 600.0).unwrap();
        let mut trial = TrialConfig::new(
            ExcitationSpec {
                duration_s: 1.0,
                ..ExcitationSpec::for_band(band, 3)
            },
            5,
        );
        trial.repetitions = reps;
        trial.added_masses = (0..levels).map(|l| 10.0 * l as f64).collect();
        let welch = WelchConfig {
            segment_len: 2048,
            ..WelchConfig::default()
        };
        crate::dataset::build_dataset(&bed, &cohort, &trial, &band, &welch).unwrap()
    }

    fn assert_partition(ds: &Dataset, plans: &[SplitPlan]) {
        let mut seen = vec![0usize; ds.records.len()];
        for p in plans {
            let mut all: Vec<usize> = p.train.iter().chain(&p.validation).chain(&p.test).copied().collect();
            all.sort_unstable();
            assert_eq!(
                all,
                (0..ds.records.len()).collect::<Vec<_>>(),
                "fold {} roles partition the dataset",
                p.fold
            );
            for &i in &p.test {
                seen[i] += 1;
            }
            assert!(!p.test.is_empty());
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn lopo_folds() {
        let ds = fake_dataset(11, 6, 20);
        assert_eq!(ds.records.len(), 1320);
        let plans = lopo_splits(&ds, 7).unwrap();
        assert_eq!(plans.len(), 11);
        assert_partition(&ds, &plans);
        for p in &plans {
            let s = ds.records[p.test[0]].subject_index;
            assert!(p
                .train
                .iter()
                .chain(&p.validation)
                .all(|&i| ds.records[i].subject_index != s));
            assert_eq!(p.validation.len(), 240);
        }
        assert_eq!(lopo_splits(&ds, 7).unwrap(), plans);
        assert_ne!(lopo_splits(&ds, 8).unwrap()[0].validation, plans[0].validation);
        assert!(lopo_splits(&fake_dataset(1, 6, 2), 0).is_err());
    }

    #[test]
    fn lowo_folds() {
        let ds = fake_dataset(11, 6, 20);
        let plans = lowo_splits(&ds, 7).unwrap();
        assert_eq!(plans.len(), 66);
        assert_partition(&ds, &plans);
        for p in &plans {
            let r = &ds.records[p.test[0]];
            let key = (r.subject_index, r.level);
            let pool: Vec<&SampleRecord> = p.train.iter().chain(&p.validation).map(|&i| &ds.records[i]).collect();
            assert!(pool.iter().all(|q| (q.subject_index, q.level) != key));
            assert!(pool.iter().any(|q| q.subject_index == key.0));
        }
        assert!(lowo_splits(&fake_dataset(3, 1, 4), 0).is_err());
    }

    fn pred(fold: usize, truth: f64, p: f64) -> RecordPrediction {
        RecordPrediction {
            fold,
            record: 0,
            subject_id: "P01".into(),
            level: 0,
            truth_kg: truth,
            predicted_kg: p,
        }
    }

    #[test]
    fn metrics_cases() {
        let perfect: Vec<_> = [60.0, 70.0, 80.0].iter().map(|&t| pred(0, t, t)).collect();
        let r = MetricsReport::from_predictions(&perfect).unwrap();
        assert_eq!(
            (r.mae_kg, r.within_10, r.within_20, r.clinical_pass),
            (0.0, 1.0, 1.0, true)
        );

        let off: Vec<_> = [55.0, 70.0, 83.0, 91.0].iter().map(|&t| pred(0, t, t * 1.1)).collect();
        let r = MetricsReport::from_predictions(&off).unwrap();
        assert_eq!(r.within_10, 1.0);
        let under: Vec<_> = [55.0, 70.0, 83.0, 91.0].iter().map(|&t| pred(0, t, t * 0.8)).collect();
        let r = MetricsReport::from_predictions(&under).unwrap();
        assert_eq!((r.within_10, r.within_20, r.clinical_pass), (0.0, 1.0, false));

        let fold = [(50.0, 52.0), (60.0, 57.5), (70.0, 70.0), (80.0, 88.0), (90.0, 89.0)];
        let preds: Vec<_> = fold.iter().map(|&(t, p)| pred(1, t, p)).collect();
        let r = MetricsReport::from_predictions(&preds).unwrap();
        assert!((r.mae_kg - (2.0 + 2.5 + 0.0 + 8.0 + 1.0) / 5.0).abs() < 1e-12);
        assert_eq!(r.within_10, 1.0);
        assert_eq!(r.folds.len(), 1);

        assert!(MetricsReport::from_predictions(&[]).is_err());
        assert!(MetricsReport::from_predictions(&[pred(0, 60.0, f64::NAN)]).is_err());
    }

    #[test]
    fn clinical_flag_boundaries() {
        // 7 of 10 within 10 % and 19 of 20 within 20 % are exactly on the thresholds.
        let mut preds: Vec<_> = (0..7).map(|_| pred(0, 100.0, 110.0)).collect();
        preds.extend((0..3).map(|_| pred(0, 100.0, 115.0)));
        let r = MetricsReport::from_predictions(&preds).unwrap();
        assert_eq!(r.within_10, 0.7);
        assert!(r.clinical_pass);
        preds[0].predicted_kg = 110.5;
        assert!(!MetricsReport::from_predictions(&preds).unwrap().clinical_pass);

        let mut preds: Vec<_> = (0..19).map(|_| pred(0, 100.0, 80.0 + 0.0)).collect();
        preds[..14].iter_mut().for_each(|p| p.predicted_kg = 100.0);
        preds.push(pred(0, 100.0, 130.0));
        let r = MetricsReport::from_predictions(&preds).unwrap();
        assert_eq!((r.within_10, r.within_20), (0.7, 0.95));
        assert!(r.clinical_pass);
    }

    #[test]
    fn report_recomputes_from_persisted_predictions() {
        let preds: Vec<_> = (0..50)
            .map(|i| pred(i % 3, 50.0 + i as f64 * 0.37, 51.3 + i as f64 * 0.41))
            .collect();
        let r = MetricsReport::from_predictions(&preds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        write_jsonl(&path, &preds).unwrap();
        let back = read_predictions(&path).unwrap();
        let r2 = MetricsReport::from_predictions(&back).unwrap();
        assert_eq!(jsonl::to_line(&r).unwrap(), jsonl::to_line(&r2).unwrap());
        let csv = predictions_csv(&preds).unwrap();
        assert_eq!(csv.lines().count(), 51);
        assert!(csv.starts_with("record,subject,level,fold,truth_kg,predicted_kg,pct_error\n"));
    }

    #[test]
    fn height_baseline_cases() {
        let recs: Vec<_> = (0..5)
            .map(|i| record(i, i, 0, 150.0 + 5.0 * i as f64, 0.8 * (150.0 + 5.0 * i as f64) - 60.0))
            .collect();
        let fit = height_only_baseline(&recs.iter().collect::<Vec<_>>()).unwrap();
        assert!((fit.alpha - 0.8).abs() < 1e-12 && (fit.beta + 60.0).abs() < 1e-9);

        // Two heights with two subjects each: the fit passes through each pair's mean.
        let recs = [
            record(0, 0, 0, 160.0, 50.0),
            record(1, 1, 0, 160.0, 70.0),
            record(2, 2, 0, 180.0, 80.0),
            record(3, 3, 0, 180.0, 100.0),
        ];
        let fit = height_only_baseline(&recs.iter().collect::<Vec<_>>()).unwrap();
        assert!((fit.predict(160.0) - 60.0).abs() < 1e-9);
        assert!((fit.predict(180.0) - 90.0).abs() < 1e-9);

        let same = [record(0, 0, 0, 170.0, 50.0), record(1, 1, 0, 170.0, 70.0)];
        assert!(height_only_baseline(&same.iter().collect::<Vec<_>>()).is_err());
    }

    #[test]
    fn height_baseline_matches_normal_equations() {
        let ds = fake_dataset(11, 6, 3);
        let recs: Vec<&SampleRecord> = ds.records.iter().collect();
        let fit = height_only_baseline(&recs).unwrap();
        let a = nalgebra::DMatrix::from_fn(recs.len(), 2, |i, j| if j == 0 { recs[i].height_cm } else { 1.0 });
        let y = nalgebra::DVector::from_iterator(recs.len(), recs.iter().map(|r| r.true_mass_kg));
        let sol = (a.transpose() * &a).lu().solve(&(a.transpose() * y)).unwrap();
        assert!((fit.alpha - sol[0]).abs() <= 1e-9 * sol[0].abs().max(1.0));
        assert!((fit.beta - sol[1]).abs() <= 1e-9 * sol[1].abs().max(1.0));
    }

    #[test]
    fn missing_models_are_rejected() {
        let ds = fake_dataset(3, 2, 2);
        let plans = lopo_splits(&ds, 0).unwrap();
        assert!(predict_folds(&ds, &plans, &[]).is_err());
    }

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 30,
            restarts: 2,
            ..TrainConfig::default()
        }
    }

    fn small_arch() -> Architecture {
        Architecture {
            spectra_hidden: vec![8, 8],
            height_hidden: vec![4, 4],
            head_hidden: vec![8],
            ..Architecture::new(0)
        }
    }

    #[test]
    fn cross_validation_runs_and_is_deterministic() {
        let ds = tiny_dataset(3, 2, 3);
        let plans = lopo_splits(&ds, 1).unwrap();
        let a = cross_validate(&ds, &plans, &small_arch(), &quick_cfg()).unwrap();
        let b = cross_validate(&ds, &plans, &small_arch(), &quick_cfg()).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.report.count, ds.records.len());
        assert_eq!(a.models.len(), 3);
        let v = vibration_only_ablation(&ds, &plans, &small_arch(), &quick_cfg()).unwrap();
        assert!(v.models.iter().all(|m| m.params.height.is_empty()));
        let (base, _) = evaluate_height_baseline(&ds, &plans).unwrap();
        assert_eq!(base.count, ds.records.len());
    }

    #[test]
    fn sweep_and_band_comparison_shapes() {
        let ds = tiny_dataset(3, 2, 2);
        let plans = lopo_splits(&ds, 1).unwrap();
        let sweep = noise_robustness_sweep(&ds, &[0.0, 10.0], &plans, &small_arch(), &quick_cfg()).unwrap();
        let clean = cross_validate(&ds, &plans, &small_arch(), &quick_cfg()).unwrap();
        assert_eq!(sweep[0].report, clean.report);
        assert_eq!(sweep.len(), 2);

        let band = ds.manifest.band;
        let cmp = band_feature_comparison(&ds, &[band, band], &plans, &small_arch(), &quick_cfg()).unwrap();
        assert_eq!(cmp.entries[0].report, cmp.entries[1].report);
        assert_eq!(cmp.best, 0);
        assert!(band_feature_comparison(&ds, &[], &plans, &small_arch(), &quick_cfg()).is_err());
    }

    proptest! {
        #[test]
        fn fractions_are_bounded(errs in proptest::collection::vec(-60.0f64..60.0, 1..40)) {
            let preds: Vec<_> = errs.iter().map(|&e| pred(0, 100.0, 100.0 + e)).collect();
            let r = MetricsReport::from_predictions(&preds).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.within_10) && (0.0..=1.0).contains(&r.within_20));
            prop_assert!(r.within_10 <= r.within_20);
            prop_assert_eq!(r.clinical_pass, r.within_10 >= 0.7 && r.within_20 >= 0.95);
        }

        #[test]
        fn split_laws(subjects in 2usize..6, levels in 2usize..4, reps in 1usize..4, seed in any::<u64>()) {
            let ds = fake_dataset(subjects, levels, reps);
            let lopo = lopo_splits(&ds, seed).unwrap();
            prop_assert_eq!(lopo.len(), subjects);
            assert_partition(&ds, &lopo);
            let lowo = lowo_splits(&ds, seed).unwrap();
            prop_assert_eq!(lowo.len(), subjects * levels);
            assert_partition(&ds, &lowo);
        }
    }
}
