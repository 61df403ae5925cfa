use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 11

[cohort]
count = 3

[excitation]
duration_s = 1.0

[trial]
repetitions = 2
added_masses = [0.0, 5.0]

[train]
epochs = 5
restarts = 2

[robustness]
noise_levels = [0.0, 10.0]
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bedweigh"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(config: &Path, out: &Path, args: &[&str]) -> Output {
    let o = bin()
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap();
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p
}

fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn full_pipeline(config: &Path, out: &Path, jobs: &str) {
    for args in [
        &["identify-band"][..],
        &["build-dataset"],
        &["train"],
        &["evaluate"],
        &["robustness"],
        &["sensitivity"],
    ] {
        let mut a = vec!["--jobs", jobs];
        a.extend_from_slice(args);
        run(config, out, &a);
    }
}

#[test]
fn help_lists_config_defaults() {
    let o = bin().arg("--help").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    for needle in [
        "identify-band",
        "build-dataset",
        "robustness",
        "[chirp]",
        "f1_hz = 1000.0",
        "repetitions = 20",
    ] {
        assert!(text.contains(needle), "help lacks {needle}");
    }
}

#[test]
fn every_command_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    full_pipeline(&config, &a, "1");
    full_pipeline(&config, &b, "1");
    let sa = snapshot(&a);
    let sb = snapshot(&b);
    for name in [
        "band_report.json",
        "dataset.jsonl",
        "splits_lopo.jsonl",
        "train_log_lopo.jsonl",
        "metrics_lopo.json",
        "predictions_lopo.jsonl",
        "predictions_lopo.csv",
        "summary_lopo.txt",
        "noise_sweep_lopo.jsonl",
        "band_comparison_lopo.json",
        "ablation_lopo.json",
        "sensitivity.csv",
    ] {
        assert!(sa.contains_key(Path::new(name)), "missing {name}");
    }
    assert!(sa.keys().any(|k| k.starts_with("models_lopo")));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{} differs between runs", k.display());
    }
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), TINY);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    full_pipeline(&config, &a, "1");
    full_pipeline(&config, &b, "3");
    let sa = snapshot(&a);
    let sb = snapshot(&b);
    assert_eq!(sa.len(), sb.len());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{} differs between --jobs 1 and 3", k.display());
    }
}

#[test]
fn identify_band_uses_default_chirp() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "seed = 1\n");
    run(&config, dir.path(), &["identify-band"]);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("band_report.json")).unwrap()).unwrap();
    assert_eq!(report["chirp"]["f0_hz"], 10.0);
    assert_eq!(report["chirp"]["f1_hz"], 1000.0);
    assert_eq!(report["chirp"]["duration_s"], 1.0);
}

fn exit_status(config_body: Option<&str>, args: &[&str]) -> (i32, String) {
    let dir = tempfile::tempdir().unwrap();
    let mut c = bin();
    if let Some(body) = config_body {
        c.arg("--config").arg(write_config(dir.path(), body));
    }
    let o = c.arg("--out").arg(dir.path().join("out")).args(args).output().unwrap();
    (
        o.status.code().unwrap(),
        String::from_utf8_lossy(&o.stderr).into_owned(),
    )
}

#[test]
fn missing_seed_is_a_validation_error() {
    let (code, err) = exit_status(None, &["build-dataset"]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("seed"), "{err}");
}

#[test]
fn unknown_key_is_named() {
    let (code, err) = exit_status(Some("seed = 1\n[trial]\nrepetitons = 3\n"), &["sensitivity"]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("repetitons"), "{err}");
}

#[test]
fn bad_value_names_its_key() {
    let (code, err) = exit_status(Some("seed = 1\n[trial]\nnoise_pct = -1.0\n"), &["build-dataset"]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("noise_pct"), "{err}");
}

#[test]
fn missing_dataset_is_an_io_error() {
    let (code, err) = exit_status(
        Some("seed = 1\n"),
        &["train", "--dataset", "/nonexistent/dataset.jsonl"],
    );
    assert_eq!(code, 4, "{err}");
}

#[test]
fn diverging_training_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        &TINY.replace("epochs = 5", "epochs = 5\nlearning_rate = 1e300"),
    );
    let out = dir.path().join("out");
    run(&config, &out, &["build-dataset"]);
    let o = bin()
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .arg("train")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
