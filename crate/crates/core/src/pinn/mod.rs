//! Weight regressor: a spectra branch with rational activations and a height
//! branch with learnable sine activations, trained with AdamW on an L1 loss
//! over several seeded restarts.

pub mod network;
pub mod pau;

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::SampleRecord;
use crate::error::{Error, Result};
use crate::{jsonl, par};

pub use network::{l1_loss, Activation, Architecture, HeightActivation, Layer, NetworkParams, SpectraActivation};
pub use pau::{pau_forward, pau_gradients, sine_forward, sine_gradients, PauParams, SineParams, PAU_POLE_TOL};

pub const MODEL_FORMAT: &str = "bedweigh-model";
pub const MODEL_VERSION: u32 = 1;
/// Training loss is recorded every this many epochs, plus the last one.
pub const LOSS_LOG_EVERY: usize = 10;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Raw (unstandardized) regression inputs and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub spectra: Array2<f64>,
    pub height_cm: Array1<f64>,
    pub target_kg: Array1<f64>,
}

impl Samples {
    pub fn new(spectra: Array2<f64>, height_cm: Array1<f64>, target_kg: Array1<f64>) -> Result<Self> {
        let n = spectra.nrows();
        for len in [height_cm.len(), target_kg.len()] {
            if len != n {
                return Err(Error::WidthMismatch {
                    expected: n,
                    actual: len,
                });
            }
        }
        let all = spectra.iter().chain(&height_cm).chain(&target_kg);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "training samples".into(),
            });
        }
        Ok(Samples {
            spectra,
            height_cm,
            target_kg,
        })
    }

    /// Targets are the total load on the bed (body plus added mass).
    pub fn from_records(records: &[&SampleRecord]) -> Result<Self> {
        let d = records.first().map_or(0, |r| r.features.len());
        let mut spectra = Array2::zeros((records.len(), d));
        for (mut row, r) in spectra.rows_mut().into_iter().zip(records) {
            if r.features.len() != d {
                return Err(Error::WidthMismatch {
                    expected: d,
                    actual: r.features.len(),
                });
            }
            row.assign(&ndarray::ArrayView1::from(&r.features));
        }
        Samples::new(
            spectra,
            records.iter().map(|r| r.height_cm).collect(),
            records.iter().map(|r| r.true_mass_kg).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.spectra.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.spectra.ncols()
    }

    pub fn select(&self, idx: &[usize]) -> Samples {
        Samples {
            spectra: self.spectra.select(Axis(0), idx),
            height_cm: self.height_cm.select(Axis(0), idx),
            target_kg: self.target_kg.select(Axis(0), idx),
        }
    }
}

/// Per-feature affine scaling to zero mean and unit population deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub spectra_mean: Vec<f64>,
    pub spectra_std: Vec<f64>,
    pub height_mean: f64,
    pub height_std: f64,
    pub target_mean: f64,
    pub target_std: f64,
}

fn mean_std(values: impl ExactSizeIterator<Item = f64> + Clone, what: &str) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let std = (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if std > 0.0 && std.is_finite() {
        (mean, std)
    } else {
        log::warn!("{what} has zero variance; using unit scale");
        (mean, 1.0)
    }
}

impl Standardizer {
    pub fn fit(s: &Samples) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::InvalidInput("cannot standardize an empty sample set".into()));
        }
        let (spectra_mean, spectra_std) = s
            .spectra
            .columns()
            .into_iter()
            .enumerate()
            .map(|(j, c)| mean_std(c.iter().copied(), &format!("feature {j}")))
            .unzip();
        let (height_mean, height_std) = mean_std(s.height_cm.iter().copied(), "height");
        let (target_mean, target_std) = mean_std(s.target_kg.iter().copied(), "target");
        Ok(Standardizer {
            spectra_mean,
            spectra_std,
            height_mean,
            height_std,
            target_mean,
            target_std,
        })
    }

    pub fn spectra(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.spectra_mean.len() {
            return Err(Error::WidthMismatch {
                expected: self.spectra_mean.len(),
                actual: x.ncols(),
            });
        }
        let mut out = x.clone();
        for ((mut c, m), s) in out
            .columns_mut()
            .into_iter()
            .zip(&self.spectra_mean)
            .zip(&self.spectra_std)
        {
            c.mapv_inplace(|v| (v - m) / s);
        }
        Ok(out)
    }

    /// Standardized heights as an `(n, 1)` column.
    pub fn height(&self, h: &Array1<f64>) -> Array2<f64> {
        h.mapv(|v| (v - self.height_mean) / self.height_std)
            .insert_axis(Axis(1))
    }

    pub fn target(&self, y: &Array1<f64>) -> Array1<f64> {
        y.mapv(|v| (v - self.target_mean) / self.target_std)
    }

    pub fn inverse_target(&self, z: &Array1<f64>) -> Array1<f64> {
        z.mapv(|v| v * self.target_std + self.target_mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub restarts: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 5e-4,
            epochs: 2000,
            restarts: 5,
            batch_size: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = self.learning_rate > 0.0 && self.learning_rate.is_finite();
        if !pos || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidInput(
                "learning rate must be positive and weight decay non-negative".into(),
            ));
        }
        if self.epochs == 0 || self.restarts == 0 || self.batch_size == Some(0) {
            return Err(Error::InvalidInput(
                "epochs, restarts and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum RestartOutcome {
    Completed { train_loss: f64, val_loss: f64 },
    Abandoned { epoch: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartLog {
    pub restart: usize,
    pub seed: u64,
    /// `(epoch, standardized training L1)` samples.
    pub loss_curve: Vec<(usize, f64)>,
    pub outcome: RestartOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub parameter_count: usize,
    pub train_count: usize,
    pub val_count: usize,
    pub restarts: Vec<RestartLog>,
    pub selected: usize,
    /// Selected restart's validation L1 on standardized targets.
    pub val_loss: f64,
    /// The same loss in kilograms.
    pub val_mae_kg: f64,
}

impl TrainingLog {
    pub fn summary(&self) -> String {
        self.restarts
            .iter()
            .map(|r| match &r.outcome {
                RestartOutcome::Completed { train_loss, val_loss } => {
                    format!("restart {}: train {train_loss:.6} val {val_loss:.6}", r.restart)
                }
                RestartOutcome::Abandoned { epoch, reason } => {
                    format!("restart {}: abandoned at epoch {epoch}: {reason}", r.restart)
                }
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub format: String,
    pub version: u32,
    pub params: NetworkParams,
    pub standardizer: Option<Standardizer>,
    pub config: TrainConfig,
    pub log: Option<TrainingLog>,
}

impl Model {
    /// Freshly initialized, unfitted model.
    pub fn untrained(arch: &Architecture, seed: u64) -> Result<Self> {
        Ok(Model {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            params: NetworkParams::init(arch, &mut ChaCha8Rng::seed_from_u64(seed))?,
            standardizer: None,
            config: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            log: None,
        })
    }

    /// Predictions in kilograms.
    pub fn predict(&self, s: &Samples) -> Result<Vec<f64>> {
        let std = self.standardizer.as_ref().ok_or(Error::Unfitted)?;
        let x = std.spectra(&s.spectra)?;
        let h = std.height(&s.height_cm);
        let z = self.params.forward(x.view(), h.view())?;
        Ok(std.inverse_target(&z).to_vec())
    }

    pub fn predict_one(&self, spectra: &[f64], height_cm: f64) -> Result<f64> {
        let s = Samples::new(
            Array2::from_shape_vec((1, spectra.len()), spectra.to_vec()).expect("one row"),
            Array1::from(vec![height_cm]),
            Array1::zeros(1),
        )?;
        Ok(self.predict(&s)?[0])
    }

    pub fn to_json(&self) -> Result<String> {
        jsonl::to_pretty(self).map_err(|e| Error::InvalidInput(format!("model serialization: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let format_err = |message: String| Error::Format {
            path: path.to_path_buf(),
            message,
        };
        let m: Model = jsonl::from_str(&text).map_err(|e| format_err(e.to_string()))?;
        if m.format != MODEL_FORMAT || m.version != MODEL_VERSION {
            return Err(format_err(format!(
                "unsupported model format {} v{}",
                m.format, m.version
            )));
        }
        Ok(m)
    }
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    fn new(n: usize) -> Self {
        AdamW {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Decoupled decay first, then the bias-corrected Adam update.
    fn step(&mut self, params: &mut NetworkParams, grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let (lr, wd) = (cfg.learning_rate, cfg.weight_decay);
        let (m, v) = (&mut self.m, &mut self.v);
        params.for_each_mut(|p, i| {
            let g = grad[i];
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            *p *= 1.0 - lr * wd;
            *p -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
        });
    }
}

struct Prepared {
    x: Array2<f64>,
    h: Array2<f64>,
    y: Array1<f64>,
}

impl Prepared {
    fn new(s: &Samples, std: &Standardizer) -> Result<Self> {
        Ok(Prepared {
            x: std.spectra(&s.spectra)?,
            h: std.height(&s.height_cm),
            y: std.target(&s.target_kg),
        })
    }

    fn loss(&self, net: &NetworkParams) -> Result<f64> {
        Ok(l1_loss(&net.forward(self.x.view(), self.h.view())?, &self.y).0)
    }

    /// L1 loss and flat gradient on the rows `idx` (all rows when `None`).
    fn loss_and_grad(&self, net: &NetworkParams, idx: Option<&[usize]>) -> Result<(f64, Vec<f64>)> {
        let (x, h, y);
        let (xv, hv, yv) = match idx {
            None => (self.x.view(), self.h.view(), &self.y),
            Some(idx) => {
                x = self.x.select(Axis(0), idx);
                h = self.h.select(Axis(0), idx);
                y = self.y.select(Axis(0), idx);
                (x.view(), h.view(), &y)
            }
        };
        let (pred, cache) = net.forward_cached(xv, hv)?;
        let (loss, dy) = l1_loss(&pred, yv);
        let grad = net.backward(xv, hv, &cache, &dy)?.to_flat();
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                what: "loss or gradient".into(),
            });
        }
        Ok((loss, grad))
    }
}

fn run_restart(
    restart: usize,
    arch: &Architecture,
    cfg: &TrainConfig,
    train: &Prepared,
    val: &Prepared,
) -> (RestartLog, Option<NetworkParams>) {
    let seed = par::derive_seed(cfg.seed, &[restart as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = RestartLog {
        restart,
        seed,
        loss_curve: Vec::new(),
        outcome: RestartOutcome::Abandoned {
            epoch: 0,
            reason: String::new(),
        },
    };
    let abandon = |mut log: RestartLog, epoch: usize, e: Error| {
        log::warn!("restart {restart} abandoned at epoch {epoch}: {e}");
        log.outcome = RestartOutcome::Abandoned {
            epoch,
            reason: e.to_string(),
        };
        (log, None)
    };
    let mut net = match NetworkParams::init(arch, &mut rng) {
        Ok(n) => n,
        Err(e) => return abandon(log, 0, e),
    };
    let mut opt = AdamW::new(net.parameter_count());
    let n = train.y.len();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        let batches: Vec<Option<&[usize]>> = match cfg.batch_size {
            Some(b) if b < n => {
                order.shuffle(&mut rng);
                order.chunks(b).map(Some).collect()
            }
            _ => vec![None],
        };
        let mut total = 0.0;
        for batch in batches {
            match train.loss_and_grad(&net, batch) {
                Ok((loss, grad)) => {
                    total += loss * batch.map_or(n, <[usize]>::len) as f64;
                    opt.step(&mut net, &grad, cfg);
                }
                Err(e) => return abandon(log, epoch, e),
            }
        }
        let epoch_loss = total / n as f64;
        if epoch % LOSS_LOG_EVERY == 0 || epoch + 1 == cfg.epochs {
            log.loss_curve.push((epoch, epoch_loss));
        }
    }
    let finals = train.loss(&net).and_then(|t| {
        let v = val.loss(&net)?;
        if t.is_finite() && v.is_finite() {
            Ok((t, v))
        } else {
            Err(Error::NonFinite {
                what: "final loss".into(),
            })
        }
    });
    match finals {
        Ok((train_loss, val_loss)) => {
            log.outcome = RestartOutcome::Completed { train_loss, val_loss };
            (log, Some(net))
        }
        Err(e) => abandon(log, cfg.epochs, e),
    }
}

/// Trains `cfg.restarts` independently seeded networks and keeps the one with
/// the lowest final validation loss. Standardizers are fit on `train` only.
pub fn train(train: &Samples, val: &Samples, arch: &Architecture, cfg: &TrainConfig) -> Result<Model> {
    cfg.validate()?;
    arch.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if train.width() != arch.input_width || val.width() != arch.input_width {
        return Err(Error::WidthMismatch {
            expected: arch.input_width,
            actual: if train.width() != arch.input_width {
                train.width()
            } else {
                val.width()
            },
        });
    }
    let std = Standardizer::fit(train)?;
    let tr = Prepared::new(train, &std)?;
    let va = Prepared::new(val, &std)?;
    let runs = par::map_range(cfg.restarts, |r| run_restart(r, arch, cfg, &tr, &va));

    let mut best: Option<(usize, f64)> = None;
    for (i, (log, _)) in runs.iter().enumerate() {
        if let RestartOutcome::Completed { val_loss, .. } = log.outcome {
            if best.is_none_or(|(_, b)| val_loss < b) {
                best = Some((i, val_loss));
            }
        }
    }
    let (logs, nets): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let parameter_count = nets.iter().flatten().next().map_or(0, NetworkParams::parameter_count);
    let mut log = TrainingLog {
        parameter_count,
        train_count: train.len(),
        val_count: val.len(),
        restarts: logs,
        selected: 0,
        val_loss: f64::NAN,
        val_mae_kg: f64::NAN,
    };
    let Some((selected, val_loss)) = best else {
        return Err(Error::TrainingFailed { log: log.summary() });
    };
    log.selected = selected;
    log.val_loss = val_loss;
    log.val_mae_kg = val_loss * std.target_std;
    log::info!(
        "trained {} parameters; selected restart {selected} with validation MAE {:.3} kg",
        parameter_count,
        log.val_mae_kg
    );
    Ok(Model {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        params: nets
            .into_iter()
            .nth(selected)
            .flatten()
            .expect("completed restart has parameters"),
        standardizer: Some(std),
        config: cfg.clone(),
        log: Some(log),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_arch(d: usize) -> Architecture {
        Architecture {
            spectra_hidden: vec![16, 8],
            height_hidden: vec![8, 8],
            head_hidden: vec![8],
            ..Architecture::new(d)
        }
    }

    fn linear_set(n: usize, seed: u64) -> Samples {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((n, 4), || rng.gen_range(0.0..1.0));
        let h = Array1::from_shape_simple_fn(n, || rng.gen_range(150.0..185.0));
        let y = Array1::from_shape_fn(n, |i| {
            50.0 + 20.0 * x[[i, 0]] - 10.0 * x[[i, 1]] + 5.0 * x[[i, 2]] + 0.4 * (h[i] - 165.0)
        });
        Samples::new(x, h, y).unwrap()
    }

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.learning_rate, c.weight_decay, c.epochs, c.restarts, c.batch_size),
            (1e-3, 5e-4, 2000, 5, None)
        );
        assert!(TrainConfig { epochs: 0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig {
            learning_rate: -1.0,
            ..c
        }
        .validate()
        .is_err());
    }

    #[test]
    fn standardizer_round_trip_and_zero_variance() {
        let s = linear_set(30, 1);
        let st = Standardizer::fit(&s).unwrap();
        let back = st.inverse_target(&st.target(&s.target_kg));
        for (a, b) in back.iter().zip(&s.target_kg) {
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
        let z = st.spectra(&s.spectra).unwrap();
        for c in z.columns() {
            assert!(c.mean().unwrap().abs() < 1e-12);
            assert!((c.std(0.0) - 1.0).abs() < 1e-12);
        }
        let mut flat = s.clone();
        flat.spectra.column_mut(3).fill(2.0);
        let st = Standardizer::fit(&flat).unwrap();
        assert_eq!(st.spectra_std[3], 1.0);
    }

    #[test]
    fn constant_target_is_learned() {
        let mut s = linear_set(40, 2);
        s.target_kg.fill(72.5);
        let cfg = TrainConfig {
            epochs: 200,
            restarts: 2,
            ..TrainConfig::default()
        };
        let model = train(
            &s.select(&(0..30).collect::<Vec<_>>()),
            &s.select(&(30..40).collect::<Vec<_>>()),
            &small_arch(4),
            &cfg,
        )
        .unwrap();
        // Adam on an L1 loss settles into a limit cycle of order the step size.
        let p = model.predict(&s).unwrap();
        let mae = p.iter().map(|v| (v - 72.5).abs()).sum::<f64>() / p.len() as f64;
        assert!(mae < 0.01, "{p:?}");
        assert!(model.log.unwrap().val_mae_kg < 0.01);
    }

    #[test]
    fn linear_map_is_learned() {
        let s = linear_set(300, 3);
        let tr: Vec<usize> = (0..240).collect();
        let va: Vec<usize> = (240..300).collect();
        let cfg = TrainConfig {
            epochs: 1500,
            restarts: 2,
            seed: 3,
            ..TrainConfig::default()
        };
        let model = train(&s.select(&tr), &s.select(&va), &small_arch(4), &cfg).unwrap();
        let val = s.select(&va);
        let pred = model.predict(&val).unwrap();
        let mae = pred.iter().zip(&val.target_kg).map(|(p, y)| (p - y).abs()).sum::<f64>() / pred.len() as f64;
        assert!(mae < 0.1, "validation MAE {mae} kg");
    }

    #[test]
    fn deterministic_and_selects_minimum() {
        let s = linear_set(60, 4);
        let (tr, va) = (
            s.select(&(0..45).collect::<Vec<_>>()),
            s.select(&(45..60).collect::<Vec<_>>()),
        );
        let cfg = TrainConfig {
            epochs: 50,
            restarts: 4,
            seed: 9,
            batch_size: Some(16),
            ..TrainConfig::default()
        };
        let a = train(&tr, &va, &small_arch(4), &cfg).unwrap();
        let b = train(&tr, &va, &small_arch(4), &cfg).unwrap();
        assert_eq!(
            a.params.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.params.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let log = a.log.unwrap();
        let seeds: std::collections::HashSet<u64> = log.restarts.iter().map(|r| r.seed).collect();
        assert_eq!(seeds.len(), 4);
        for r in &log.restarts {
            if let RestartOutcome::Completed { val_loss, .. } = r.outcome {
                assert!(log.val_loss <= val_loss);
            }
        }
    }

    #[test]
    fn predict_requires_fit_and_checkpoint_is_exact() {
        let s = linear_set(20, 5);
        let m = Model::untrained(&small_arch(4), 0).unwrap();
        assert!(matches!(m.predict(&s), Err(Error::Unfitted)));
        let cfg = TrainConfig {
            epochs: 5,
            restarts: 1,
            ..TrainConfig::default()
        };
        let m = train(
            &s.select(&(0..15).collect::<Vec<_>>()),
            &s.select(&(15..20).collect::<Vec<_>>()),
            &small_arch(4),
            &cfg,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.predict(&s).unwrap(), m.predict(&s).unwrap());
        let row = s.spectra.row(0).to_vec();
        assert_eq!(
            m.predict_one(&row, s.height_cm[0]).unwrap(),
            m.predict_one(&row, s.height_cm[0]).unwrap()
        );
    }

    #[test]
    fn all_restarts_failing_is_reported() {
        let s = linear_set(20, 6);
        let cfg = TrainConfig {
            epochs: 3,
            restarts: 2,
            learning_rate: 1e300,
            ..TrainConfig::default()
        };
        match train(
            &s.select(&(0..15).collect::<Vec<_>>()),
            &s.select(&(15..20).collect::<Vec<_>>()),
            &small_arch(4),
            &cfg,
        ) {
            Err(Error::TrainingFailed { log }) => assert!(log.contains("abandoned")),
            other => panic!("{other:?}"),
        }
    }
}
