use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rnnattn"))
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_synth(dir: &Path) {
    ok(bin()
        .args([
            "synth",
            "--stocks",
            "3",
            "--months",
            "60",
            "--factors",
            "5",
            "--seed",
            "4",
            "--out",
        ])
        .arg(dir.join("data"))
        .output()
        .unwrap());
}

fn write_config(dir: &Path, models: &str) -> std::path::PathBuf {
    let text = format!(
        r#"
[data]
factors = "data/factors.csv"
returns = "data/returns.csv"
caps = "data/caps.csv"
riskfree = "data/rf.csv"

[period]
label = "custom"
train_len = 40
test_len = 6

[models]
kinds = [{models}]
hidden = [3, 2]
window = 4

[train]
max_epochs = 10
refit_every = 3

[autoencoder]
max_epochs = 10

[output]
dir = "out"

[run]
seed = 9
threads = 2
"#
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn run_writes_every_report_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    write_synth(dir.path());
    let cfg = write_config(dir.path(), r#""RNN", "LD", "self_att", "sparse_att""#);
    let out = ok(bin().arg("run").arg("--config").arg(&cfg).output().unwrap());
    assert!(String::from_utf8_lossy(&out.stdout).contains("sparse_att"));
    let o = dir.path().join("out");
    for f in [
        "manifest.json",
        "metrics_custom.csv",
        "dm_custom.csv",
        "bt_equal_custom.csv",
        "bt_value_custom.csv",
        "cumret_LD_equal.csv",
        "cumret_self_att_value.csv",
        "forecasts_RNN.csv",
    ] {
        assert!(o.join(f).is_file(), "missing {f}");
    }
    let again = dir.path().join("again");
    ok(bin()
        .arg("run")
        .arg("--manifest")
        .arg(o.join("manifest.json"))
        .arg("--out")
        .arg(&again)
        .output()
        .unwrap());
    for f in [
        "metrics_custom.csv",
        "dm_custom.csv",
        "bt_value_custom.csv",
        "forecasts_sparse_att.csv",
    ] {
        assert_eq!(
            std::fs::read(o.join(f)).unwrap(),
            std::fs::read(again.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn stages_run_from_persisted_forecasts() {
    let dir = tempfile::tempdir().unwrap();
    write_synth(dir.path());
    let cfg = write_config(dir.path(), r#""GRU", "Batt""#);
    ok(bin().arg("train").arg("-c").arg(&cfg).output().unwrap());
    let o = dir.path().join("out");
    assert!(o.join("forecasts_GRU.csv").is_file());
    assert!(!o.join("metrics_custom.csv").exists());
    ok(bin().arg("evaluate").arg("-c").arg(&cfg).output().unwrap());
    ok(bin().arg("backtest").arg("-c").arg(&cfg).output().unwrap());
    let first = std::fs::read(o.join("metrics_custom.csv")).unwrap();
    let out = ok(bin().arg("report").arg("-c").arg(&cfg).output().unwrap());
    assert!(String::from_utf8_lossy(&out.stdout).contains("BH"));
    assert_eq!(first, std::fs::read(o.join("metrics_custom.csv")).unwrap());
}

#[test]
fn empty_model_list_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = bin().arg("run").arg("-c").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_data_is_a_data_error_with_partial_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#""RNN""#);
    let out = bin().arg("run").arg("-c").arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let manifest = std::fs::read_to_string(dir.path().join("out/manifest.json")).unwrap();
    assert!(manifest.contains("\"failed\""));
    assert!(manifest.contains("\"stage\": \"load\""));
}

#[test]
fn seed_override_changes_forecasts() {
    let dir = tempfile::tempdir().unwrap();
    write_synth(dir.path());
    let cfg = write_config(dir.path(), r#""RNN""#);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(bin()
        .arg("train")
        .arg("-c")
        .arg(&cfg)
        .arg("--out")
        .arg(&a)
        .output()
        .unwrap());
    ok(bin()
        .arg("train")
        .arg("-c")
        .arg(&cfg)
        .arg("--out")
        .arg(&b)
        .env("RNNATTN_SEED", "10")
        .output()
        .unwrap());
    assert_ne!(
        std::fs::read(a.join("forecasts_RNN.csv")).unwrap(),
        std::fs::read(b.join("forecasts_RNN.csv")).unwrap()
    );
}
