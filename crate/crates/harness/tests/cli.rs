use std::path::Path;
use std::process::{Command, Output};

use rosetta_core::datasets::{load_tabular, TabularFormat};

fn rosetta(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rosetta"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .env("ROSETTA_WORKERS", "2")
        .output()
        .expect("binary runs")
}

fn json_line(bytes: &[u8]) -> serde_json::Value {
    let text = String::from_utf8_lossy(bytes);
    let line = text.lines().last().expect("one output line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("`{line}`: {e}"))
}

#[test]
fn data_train_distill_export_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = rosetta(d, &["gen-data", "--n-per-component", "10", "--out", "data.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json_line(&out.stdout)["rows"], 80);

    let common = ["--data", "data.csv", "--epochs", "3", "--hidden", "8", "--batch-size", "16"];
    let mut args = vec!["train", "--out", "vae.ckpt"];
    args.extend(common);
    let out = rosetta(d, &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json_line(&out.stdout)["epochs"], 3);
    assert!(d.join("vae.ckpt").is_file() && d.join("vae.trace.csv").is_file());

    let mut args = vec!["distill", "--checkpoint", "vae.ckpt", "--k", "4", "--out", "r1.csv"];
    args.extend(common);
    let out = rosetta(d, &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json_line(&out.stdout)["pairs"], 4);

    let mut args = vec!["train", "--method", "r_vae", "--rho", "1.5", "--rosetta", "r1.csv", "--out", "rvae.ckpt"];
    args.extend(common);
    let out = rosetta(d, &args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = rosetta(d, &["export", "--checkpoint", "rvae.ckpt", "--data", "data.csv", "--out", "emb.csv"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = load_tabular(&d.join("emb.csv"), TabularFormat::Delimited).unwrap();
    assert_eq!((table.len(), table.dim()), (80, 2 + 4));
}

#[test]
fn failures_emit_one_json_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = rosetta(dir.path(), &["export", "--checkpoint", "missing.ckpt", "--out", "x.csv"]);
    assert!(!out.status.success());
    let err = json_line(&out.stderr);
    assert_eq!(err["error"], "model");
    assert!(err["message"].as_str().unwrap().contains("No such file"));

    let out = rosetta(dir.path(), &["train", "--method", "r_vae", "--out", "m.ckpt"]);
    assert!(!out.status.success());
    assert_eq!(json_line(&out.stderr)["error"], "config");

    std::fs::write(dir.path().join("bad.toml"), "n_repeats = \"ten\"\n").unwrap();
    let out = rosetta(dir.path(), &["--config", "bad.toml", "repro"]);
    assert!(!out.status.success());
    assert_eq!(json_line(&out.stderr)["error"], "config");
}

#[test]
fn config_file_with_flag_overrides_and_resummary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("exp.toml"),
        r#"
n_repeats = 5
k = 4

[dataset]
kind = "eight_gaussians"
n_per_component = 12
sigma_cluster = 0.5
sigma_noise = 1.0
seed = 1

[train]
epochs = 3
batch_size = 32

[grid]
enabled = false
"#,
    )
    .unwrap();
    // flag wins over the file's n_repeats
    let out = rosetta(d, &["--config", "exp.toml", "repro", "--n-repeats", "2", "--output-dir", "out"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json_line(&out.stdout);
    assert_eq!(v["runs"], 6);
    assert_eq!(v["failed_runs"], 0);

    let table = d.join("out/reports/repro_table.txt");
    let before = std::fs::read(&table).unwrap();
    std::fs::remove_file(&table).unwrap();
    let out = rosetta(d, &["report", "--dir", "out/reports", "--name", "repro"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(&table).unwrap(), before);
}
