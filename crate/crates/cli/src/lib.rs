//! Batch pipeline commands. Each command is a pure function of the config
//! file, its input files and the seed; outputs are byte-stable.

pub mod config;

use std::path::{Path, PathBuf};

use bedweigh::dataset::{build_dataset, generate_cohort, BedSpec, Dataset};
use bedweigh::dsp::FrequencyBand;
use bedweigh::eval::{self, Protocol, SplitPlan};
use bedweigh::excitation::{
    chirp_response, identify_band, sensitivity_scan, validate_band, BandReport, BandValidation, ChirpConfig,
};
use bedweigh::par::derive_seed;
use bedweigh::pinn::Model;
use bedweigh::{jsonl, Error, ErrorKind, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::RunConfig;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "bedweigh",
    version,
    about = "Body weight estimation from bed vibration: simulation, band identification, training and evaluation"
)]
pub struct Cli {
    /// TOML run configuration; defaults are listed below.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides `seed` in the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for folds and restarts.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the unloaded bed's chirp response and pick the feature band.
    IdentifyBand,
    /// Synthesize the cohort trials and write the feature dataset.
    BuildDataset,
    /// Train one network per cross-validation fold.
    Train(DataArgs),
    /// Score trained fold models and the height-only baseline.
    Evaluate(DataArgs),
    /// Noise sweep, band comparison and vibration-only ablation.
    Robustness(DataArgs),
    /// Tabulate mass sensitivity of the bed transfer over the chirp range.
    Sensitivity,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset file (default `<out>/dataset.jsonl`).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Cross-validation protocol (overrides `train.protocol`).
    #[arg(long, value_parser = parse_protocol)]
    pub protocol: Option<Protocol>,
    /// Directory of fold checkpoints (default `<out>/models_<protocol>`).
    #[arg(long)]
    pub models: Option<PathBuf>,
}

fn parse_protocol(s: &str) -> std::result::Result<Protocol, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Validation => EXIT_VALIDATION,
        ErrorKind::Numerical => EXIT_NUMERICAL,
        ErrorKind::Io => EXIT_IO,
    }
}

/// Resolved configuration shared by every command.
pub struct Context {
    pub cfg: RunConfig,
    pub base: PathBuf,
    pub out: PathBuf,
}

impl Context {
    pub fn new(cli: &Cli) -> Result<Self> {
        let (mut cfg, base) = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => (RunConfig::default(), PathBuf::new()),
        };
        if cli.seed.is_some() {
            cfg.seed = cli.seed;
        }
        let out = cli.out.clone().unwrap_or_else(|| base.join(&cfg.out));
        if cli.jobs == 0 {
            return Err(Error::config("--jobs", "must be at least 1"));
        }
        Ok(Context { cfg, base, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn ensure_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))
    }

    fn protocol(&self, args: &DataArgs) -> Protocol {
        args.protocol.unwrap_or(self.cfg.train.protocol)
    }

    fn dataset(&self, args: &DataArgs) -> Result<Dataset> {
        Dataset::read(&args.dataset.clone().unwrap_or_else(|| self.path("dataset.jsonl")))
    }

    fn models_dir(&self, args: &DataArgs, protocol: Protocol) -> PathBuf {
        args.models
            .clone()
            .unwrap_or_else(|| self.path(&format!("models_{}", protocol_name(protocol))))
    }

    fn splits(&self, ds: &Dataset, protocol: Protocol) -> Result<Vec<SplitPlan>> {
        eval::splits(
            ds,
            protocol,
            derive_seed(self.cfg.require_seed()?, &[config::stream::SPLITS]),
        )
    }
}

pub fn protocol_name(p: Protocol) -> &'static str {
    match p {
        Protocol::Lopo => "lopo",
        Protocol::Lowo => "lowo",
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(
        path,
        &jsonl::to_pretty(value).map_err(|e| Error::InvalidInput(format!("serialization: {e}")))?,
    )
}

/// Runs `cli` on a pool of `cli.jobs` threads.
pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Context::new(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| Error::config("--jobs", e.to_string()))?;
    pool.install(|| dispatch(&ctx, &cli.command))
}

fn dispatch(ctx: &Context, command: &Command) -> Result<()> {
    ctx.ensure_out()?;
    match command {
        Command::IdentifyBand => cmd_identify_band(ctx).map(|_| ()),
        Command::BuildDataset => cmd_build_dataset(ctx).map(|_| ()),
        Command::Train(a) => cmd_train(ctx, a),
        Command::Evaluate(a) => cmd_evaluate(ctx, a),
        Command::Robustness(a) => cmd_robustness(ctx, a),
        Command::Sensitivity => cmd_sensitivity(ctx),
    }
}

#[derive(Debug, Serialize)]
struct BandFile<'a> {
    bed: &'a str,
    chirp: ChirpConfig,
    report: &'a BandReport,
    validation: &'a BandValidation,
}

fn identify(ctx: &Context, bed: &BedSpec) -> Result<(BandReport, BandValidation)> {
    let chirp = ctx.cfg.chirp()?;
    let board = &bed.boards[bed.source_board];
    let response = chirp_response(&board.plate, &bed.source_probe(), 0.0, &chirp)?;
    let report = identify_band(&response, &ctx.cfg.welch()?, ctx.cfg.band.coverage)?;
    let probe = bed.subject_probe(ctx.cfg.sensitivity.height_cm)?;
    let validation = validate_band(
        &board.plate,
        &probe,
        &ctx.cfg.sensitivity.added_masses,
        &report.band,
        &chirp.range()?,
    )?;
    log::info!(
        "band {} (peaks {:?}); in-band sensitivity share {:.3}",
        report.band,
        report.peak_freqs,
        validation.mean_fraction
    );
    Ok((report, validation))
}

/// Writes `band_report.json`.
pub fn cmd_identify_band(ctx: &Context) -> Result<BandReport> {
    let bed = ctx.cfg.bed_spec(&ctx.base)?;
    let (report, validation) = identify(ctx, &bed)?;
    write_json(
        &ctx.path("band_report.json"),
        &BandFile {
            bed: &bed.name,
            chirp: ctx.cfg.chirp()?,
            report: &report,
            validation: &validation,
        },
    )?;
    Ok(report)
}

/// Writes `dataset.jsonl`.
pub fn cmd_build_dataset(ctx: &Context) -> Result<Dataset> {
    let seed = ctx.cfg.require_seed()?;
    let bed = ctx.cfg.bed_spec(&ctx.base)?;
    let welch = ctx.cfg.welch()?;
    let (band, report) = match ctx.cfg.fixed_band()? {
        Some(b) => (b, None),
        None => {
            let (r, _) = identify(ctx, &bed)?;
            (r.band, Some(r))
        }
    };
    let cohort = generate_cohort(
        &ctx.cfg.cohort_spec(&ctx.base)?,
        derive_seed(seed, &[config::stream::COHORT]),
    )?;
    let trial = ctx.cfg.trial(ctx.cfg.excitation(&band, seed)?, seed)?;
    let mut ds = build_dataset(&bed, &cohort, &trial, &band, &welch)?;
    ds.manifest.band_report = report;
    ds.write(&ctx.path("dataset.jsonl"))?;
    log::info!(
        "{} records, {} features each",
        ds.records.len(),
        ds.manifest.feature_len
    );
    Ok(ds)
}

#[derive(Debug, Serialize)]
struct FoldLog<'a> {
    fold: usize,
    label: &'a str,
    parameter_count: usize,
    selected_restart: usize,
    val_mae_kg: f64,
    restarts: String,
}

/// Writes `splits_<p>.jsonl`, `train_log_<p>.jsonl` and one checkpoint per
/// fold under the models directory.
pub fn cmd_train(ctx: &Context, args: &DataArgs) -> Result<()> {
    let seed = ctx.cfg.require_seed()?;
    let protocol = ctx.protocol(args);
    let ds = ctx.dataset(args)?;
    let splits = ctx.splits(&ds, protocol)?;
    let models = eval::train_folds(&ds, &splits, &ctx.cfg.architecture()?, &ctx.cfg.train_config(seed)?)?;
    let dir = ctx.models_dir(args, protocol);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let name = protocol_name(protocol);
    eval::write_jsonl(&ctx.path(&format!("splits_{name}.jsonl")), &splits)?;
    let mut logs = Vec::new();
    for (split, model) in splits.iter().zip(&models) {
        model.save(&dir.join(format!("fold_{:03}.json", split.fold)))?;
        let log = model.log.as_ref().expect("trained model has a log");
        logs.push(FoldLog {
            fold: split.fold,
            label: &split.label,
            parameter_count: log.parameter_count,
            selected_restart: log.selected,
            val_mae_kg: log.val_mae_kg,
            restarts: log.summary(),
        });
    }
    eval::write_jsonl(&ctx.path(&format!("train_log_{name}.jsonl")), &logs)
}

fn read_splits(path: &Path) -> Result<Vec<SplitPlan>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(|l| {
            jsonl::from_str(l).map_err(|e| Error::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct EvaluationFile<'a> {
    protocol: Protocol,
    model: &'a eval::MetricsReport,
    height_only: &'a eval::MetricsReport,
    /// Relative MAE reduction of the model over the height-only baseline.
    improvement_over_height: f64,
}

/// Writes `metrics_<p>.json`, `predictions_<p>.jsonl`, `predictions_<p>.csv`
/// and `summary_<p>.txt`.
pub fn cmd_evaluate(ctx: &Context, args: &DataArgs) -> Result<()> {
    let protocol = ctx.protocol(args);
    let name = protocol_name(protocol);
    let ds = ctx.dataset(args)?;
    let splits = read_splits(&ctx.path(&format!("splits_{name}.jsonl")))?;
    let dir = ctx.models_dir(args, protocol);
    let models = splits
        .iter()
        .map(|s| Model::load(&dir.join(format!("fold_{:03}.json", s.fold))))
        .collect::<Result<Vec<_>>>()?;
    let (report, preds) = eval::evaluate(&ds, &splits, &models)?;
    let (baseline, _) = eval::evaluate_height_baseline(&ds, &splits)?;
    let improvement = 1.0 - report.mae_kg / baseline.mae_kg;
    write_json(
        &ctx.path(&format!("metrics_{name}.json")),
        &EvaluationFile {
            protocol,
            model: &report,
            height_only: &baseline,
            improvement_over_height: improvement,
        },
    )?;
    eval::write_jsonl(&ctx.path(&format!("predictions_{name}.jsonl")), &preds)?;
    write(
        &ctx.path(&format!("predictions_{name}.csv")),
        &eval::predictions_csv(&preds)?,
    )?;
    let summary = format!(
        "protocol {name}\nmodel        {}\nheight only  {}\nMAE reduction over height only: {:.1} %\n",
        report.summary(),
        baseline.summary(),
        100.0 * improvement
    );
    write(&ctx.path(&format!("summary_{name}.txt")), &summary)?;
    print!("{summary}");
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationFile<'a> {
    protocol: Protocol,
    vibration_only: &'a eval::MetricsReport,
}

/// Writes `noise_sweep_<p>.jsonl`, `band_comparison_<p>.json` and
/// `ablation_<p>.json`.
pub fn cmd_robustness(ctx: &Context, args: &DataArgs) -> Result<()> {
    let seed = ctx.cfg.require_seed()?;
    let protocol = ctx.protocol(args);
    let name = protocol_name(protocol);
    let ds = ctx.dataset(args)?;
    let splits = ctx.splits(&ds, protocol)?;
    let arch = ctx.cfg.architecture()?;
    let train = ctx.cfg.train_config(seed)?;

    let sweep = eval::noise_robustness_sweep(&ds, &ctx.cfg.noise_levels()?, &splits, &arch, &train)?;
    eval::write_jsonl(&ctx.path(&format!("noise_sweep_{name}.jsonl")), &sweep)?;

    let bands = ctx.cfg.candidate_bands(&ds.manifest.band)?;
    let excited = ds.manifest.trial.excitation.band;
    for b in &bands {
        if b.lo_hz < excited.lo_hz || b.hi_hz > excited.hi_hz {
            log::warn!(
                "candidate band {b} extends outside the excitation band {excited}; its features are noise-dominated"
            );
        }
    }
    let cmp = eval::band_feature_comparison(&ds, &bands, &splits, &arch, &train)?;
    write_json(&ctx.path(&format!("band_comparison_{name}.json")), &cmp)?;

    let ablation = eval::vibration_only_ablation(&ds, &splits, &arch, &train)?;
    write_json(
        &ctx.path(&format!("ablation_{name}.json")),
        &AblationFile {
            protocol,
            vibration_only: &ablation.report,
        },
    )?;
    for s in &sweep {
        println!("extra noise {:>5.1} %: {}", s.extra_noise_pct, s.report.summary());
    }
    for (i, e) in cmp.entries.iter().enumerate() {
        println!(
            "band {}{}: {}",
            e.band,
            if i == cmp.best { " (best)" } else { "" },
            e.report.summary()
        );
    }
    println!("vibration only: {}", ablation.report.summary());
    Ok(())
}

/// Writes `sensitivity.csv`: one row per frequency, one column per added mass.
pub fn cmd_sensitivity(ctx: &Context) -> Result<()> {
    let bed = ctx.cfg.bed_spec(&ctx.base)?;
    let range: FrequencyBand = ctx.cfg.chirp()?.range()?;
    let board = &bed.boards[bed.source_board];
    let probe = bed.subject_probe(ctx.cfg.sensitivity.height_cm)?;
    let masses = &ctx.cfg.sensitivity.added_masses;
    if masses.is_empty() || masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(Error::config(
            "sensitivity.added_masses",
            "needs at least one non-negative mass",
        ));
    }
    let scans = bedweigh::par::try_map(masses, |&m| sensitivity_scan(&board.plate, &probe, m, &range))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
    let mut header = vec!["freq_hz".to_string()];
    header.extend(masses.iter().map(|m| format!("s_{m}kg")));
    w.write_record(&header).map_err(csv_err)?;
    for (k, f) in scans[0].0.iter().enumerate() {
        let mut row = vec![f.to_string()];
        row.extend(scans.iter().map(|(_, s)| s[k].to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
    write(
        &ctx.path("sensitivity.csv"),
        &String::from_utf8(bytes).expect("ASCII rows"),
    )?;
    for (m, (grid, s)) in masses.iter().zip(&scans) {
        let k = (0..s.len()).fold(0, |b, i| if s[i] > s[b] { i } else { b });
        println!("added {m} kg: peak sensitivity at {} Hz", grid[k]);
    }
    Ok(())
}
