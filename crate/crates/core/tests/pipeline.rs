use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use chrono::{Duration, NaiveDate};

use timeemb::cli::{self, Manifest};

fn synthetic_csv(path: &Path, steps: usize, channels: usize, step_minutes: i64) {
    let t0 = NaiveDate::from_ymd_opt(2016, 7, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let mut text = String::from("date");
    for c in 0..channels {
        write!(text, ",c{c}").unwrap();
    }
    text.push('\n');
    for t in 0..steps {
        let stamp = t0 + Duration::minutes(step_minutes * t as i64);
        write!(text, "{}", stamp.format("%Y-%m-%d %H:%M:%S")).unwrap();
        for c in 0..channels {
            let phase = 2.0 * std::f64::consts::PI * (t % 24) as f64 / 24.0;
            let v = 3.0 * (phase + c as f64 * 0.3).sin() + ((t * 7 + c * 13) % 17) as f64 / 17.0;
            write!(text, ",{v:.5}").unwrap();
        }
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

fn manifests_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("manifests")
}

const SMALL: &str = r#"
[dataset]
name = "Toy"
path = "toy.csv"

[model]
lookback = 24
horizon = 12
hidden = 16

[[model.banks]]
name = "day"
slots = 24

[train]
batch_size = 32
max_epochs = 2
patience = 2

[run]
seeds = [0, 1]
"#;

#[test]
fn echoed_manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("toy.csv");
    synthetic_csv(&csv, 600, 3, 60);
    let data = format!("dataset.path={:?}", csv.display().to_string());
    let out = format!("run.output_dir={:?}", dir.path().join("a").display().to_string());
    let m = Manifest::parse(SMALL, &[data, out]).unwrap();
    let first = cli::run_experiment(&m, &["full".into()], &dir.path().join("res_a")).unwrap();
    assert_eq!(first.len(), 2);
    assert!(dir.path().join("a/full/seed1/checkpoint.json").is_file());
    assert!(dir.path().join("a/full/seed0/train_log.csv").is_file());

    let echoed = dir.path().join("a/manifest.toml");
    let out = format!("run.output_dir={:?}", dir.path().join("b").display().to_string());
    let again = Manifest::load(&echoed, &[out]).unwrap();
    let second = cli::run_experiment(&again, &["full".into()], &dir.path().join("res_b")).unwrap();
    for (a, b) in first.iter().zip(&second) {
        assert_eq!((a.mse, a.mae, a.n_windows), (b.mse, b.mae, b.n_windows));
    }
    let summary = |r: &str| std::fs::read(dir.path().join(r).join("summary.csv")).unwrap();
    assert_eq!(summary("res_a"), summary("res_b"));
}

#[test]
fn evaluate_and_export_use_saved_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("toy.csv");
    synthetic_csv(&csv, 600, 2, 60);
    let m = Manifest::parse(
        SMALL,
        &[
            format!("dataset.path={:?}", csv.display().to_string()),
            format!("run.output_dir={:?}", dir.path().join("run").display().to_string()),
            "run.seeds=[3]".into(),
        ],
    )
    .unwrap();
    let rec = cli::run_experiment(&m, &["full".into(), "no_embedding".into(), "last_value".into()], &dir.path().join("res"))
        .unwrap();
    assert_eq!(rec.len(), 3);
    let ck = dir.path().join("run/full/seed3/checkpoint.json");
    let met = cli::evaluate_checkpoint(&m, &ck, 3).unwrap();
    assert_eq!((met.mse, met.mae), (rec[0].mse, rec[0].mae));

    let out = dir.path().join("export");
    cli::export_components(&m, &ck, "test", &[0, 24], &out).unwrap();
    for f in ["spectrum.csv", "invariant.csv", "residual.csv", "banks.csv", "filter.csv"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let runs = std::fs::read_to_string(dir.path().join("res/runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 4);
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_timeemb"))
}

#[test]
fn exit_codes_follow_the_contract() {
    let ok = bin().args(["verify", "--seed", "1"]).output().unwrap();
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("gradient_check[filter.re]"));

    let bad = bin().args(["verify", "--perturb-filter-grad"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(1));

    let etth1 = manifests_dir().join("ETTh1.toml");
    let missing = bin()
        .arg("train")
        .arg(&etth1)
        .args(["--data", "/nonexistent/ETTh1.csv"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("dataset.path"));

    let bad_key = bin().arg("param-count").arg(&etth1).args(["--set", "train.alpha=1.5"]).output().unwrap();
    assert_eq!(bad_key.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("train.alpha"));

    let bad_variant = bin().arg("param-count").arg(&etth1).args(["--variant", "nope"]).output().unwrap();
    assert_eq!(bad_variant.status.code(), Some(2));
}

#[test]
fn param_count_reports_the_bank_term() {
    let out = bin().arg("param-count").arg(manifests_dir().join("ETTh1.toml")).output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.split_whitespace().collect::<Vec<_>>() == ["banks", "8232"]), "{text}");
}

#[test]
fn shipped_manifests_parse() {
    for entry in std::fs::read_dir(manifests_dir()).unwrap() {
        let path = entry.unwrap().path();
        let m = Manifest::load(&path, &[]).unwrap();
        let cfg = m.model.to_config(m.model.channels.unwrap()).unwrap();
        cfg.validate().unwrap();
        assert_eq!((m.model.hidden, m.train.patience, m.train.max_epochs), (512, 5, 30));
        let expected_batch = if matches!(m.dataset.name.as_str(), "Electricity" | "Traffic") { 64 } else { 256 };
        assert_eq!(m.train.batch_size, expected_batch, "{}", path.display());
    }
}

fn large_slice_runs(name: &str, channels: usize) {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("slice.csv");
    synthetic_csv(&csv, 2000, channels, 60);
    let m = Manifest::load(
        &manifests_dir().join(format!("{name}.toml")),
        &[
            format!("dataset.path={:?}", csv.display().to_string()),
            format!("run.output_dir={:?}", dir.path().join("run").display().to_string()),
            "dataset.truncate=2000".into(),
            "run.seeds=[0]".into(),
            "train.max_epochs=1".into(),
            "train.patience=1".into(),
        ],
    )
    .unwrap();
    let rec = cli::run_experiment(&m, &["full".into()], &dir.path().join("res")).unwrap();
    assert!(rec[0].mse.is_finite() && rec[0].mae.is_finite());
}

#[test]
fn electricity_config_runs_on_a_2000_step_slice() {
    large_slice_runs("Electricity", 321);
}

#[test]
fn traffic_config_runs_on_a_2000_step_slice() {
    large_slice_runs("Traffic", 862);
}
