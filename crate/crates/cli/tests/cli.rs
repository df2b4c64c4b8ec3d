use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use fmdt_core::Dataset;

struct Run {
    code: i32,
    dir: Option<PathBuf>,
    stderr: String,
}

fn fmdt(args: &[&str], cwd: &Path) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_fmdt"))
        .args(args)
        .current_dir(cwd)
        .env_remove("FMDT_THREADS")
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout).trim().to_string();
    Run {
        code: out.status.code().unwrap_or(-1),
        dir: (!stdout.is_empty()).then(|| cwd.join(stdout)),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn ok(r: Run) -> PathBuf {
    assert_eq!(r.code, 0, "{}", r.stderr);
    r.dir.unwrap()
}

fn gen(dir: &Path, name: &str, spec: &str) -> PathBuf {
    let cfg = write(dir, &format!("{name}.json"), &format!(r#"{{"spec": {spec}}}"#));
    let run = ok(fmdt(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", "runs"], dir));
    let dest = dir.join(format!("{name}.fmdt"));
    fs::copy(run.join("dataset.fmdt"), &dest).unwrap();
    dest
}

#[test]
fn preset_and_k_point_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let p = gen(tmp.path(), "three", r#"{"kind": "preset", "name": "fig5a-3pt"}"#);
    let ds = Dataset::load(&p).unwrap();
    assert_eq!((ds.len(), ds.dim()), (3, 1));
    let p = gen(tmp.path(), "one", r#"{"kind": "k-point", "k": 1, "dim": 3, "scale": 2.0}"#);
    assert_eq!(Dataset::load(&p).unwrap().len(), 1);
}

#[test]
fn generated_files_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "gm.json",
        r#"{"seed": 7, "spec": {"kind": "gaussian-mixture", "n": 1000, "components": 8, "radius": 4.0, "std": 0.3}}"#,
    );
    let a = ok(fmdt(&["gen-data", "--config", "gm.json", "--out", "runs"], tmp.path()));
    let b = ok(fmdt(&["gen-data", "--config", cfg.to_str().unwrap(), "--out", "runs"], tmp.path()));
    assert_ne!(a, b);
    assert_eq!(fs::read(a.join("dataset.fmdt")).unwrap(), fs::read(b.join("dataset.fmdt")).unwrap());
    let c = ok(fmdt(&["gen-data", "--config", "gm.json", "--seed", "8", "--out", "runs"], tmp.path()));
    assert_ne!(fs::read(a.join("dataset.fmdt")).unwrap(), fs::read(c.join("dataset.fmdt")).unwrap());
}

#[test]
fn toml_configs_are_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "g.toml", "seed = 2\n[spec]\nkind = \"blobs8x8\"\nn = 5\n");
    let dir = ok(fmdt(&["gen-data", "--config", "g.toml", "--out", "runs"], tmp.path()));
    let ds = Dataset::load(dir.join("dataset.fmdt")).unwrap();
    assert_eq!((ds.len(), ds.dim()), (5, 64));
}

#[test]
fn missing_dataset_is_a_schema_error() {
    let tmp = tempfile::tempdir().unwrap();
    write(
        tmp.path(),
        "t.json",
        r#"{"dataset": "nope.fmdt", "net": {"hidden": [8]}, "class": "nn", "weighting": {"kind": "den"}}"#,
    );
    let r = fmdt(&["train", "--config", "t.json"], tmp.path());
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("dataset"), "{}", r.stderr);
    assert!(!tmp.path().join("runs").exists());
}

#[test]
fn malformed_fields_are_named() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "a.json", r#"{"spec": {"kind": "preset", "name": "fig5a-3pt"}, "sed": 3}"#);
    let r = fmdt(&["gen-data", "--config", "a.json"], tmp.path());
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("sed"), "{}", r.stderr);

    let d = gen(tmp.path(), "d", r#"{"kind": "preset", "name": "fig5a-3pt"}"#);
    write(
        tmp.path(),
        "p.json",
        &format!(
            r#"{{"model": {{"kind": "closed-form", "dataset": "{}"}}, "test_dataset": "d.fmdt", "n_eval": "many"}}"#,
            d.display()
        ),
    );
    let r = fmdt(&["psnr", "--config", "p.json"], tmp.path());
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("n_eval"), "{}", r.stderr);
}

#[test]
fn runtime_failures_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "a", r#"{"kind": "k-point", "k": 4, "dim": 2, "scale": 1.0}"#);
    gen(tmp.path(), "b", r#"{"kind": "k-point", "k": 4, "dim": 3, "scale": 1.0}"#);
    write(tmp.path(), "ts.json", r#"{"a": "a.fmdt", "b": "b.fmdt", "kind": {"kind": "energy-distance"}}"#);
    let r = fmdt(&["twosample", "--config", "ts.json"], tmp.path());
    assert_eq!(r.code, 1, "{}", r.stderr);
    assert!(r.stderr.contains("dimension"), "{}", r.stderr);
}

#[test]
fn trained_one_point_model_samples_its_point() {
    let tmp = tempfile::tempdir().unwrap();
    let data = Dataset::from_rows("one", vec![vec![0.7, -0.4]], None).unwrap();
    data.save(tmp.path().join("one.fmdt")).unwrap();
    write(
        tmp.path(),
        "train.json",
        r#"{
            "seed": 1,
            "dataset": "one.fmdt",
            "net": {"hidden": [32, 32], "time_embed": {"frequencies": [], "includes_raw_t": true}},
            "class": "identity-plus-nn",
            "weighting": {"kind": "den"},
            "train": {"epochs": 2000, "batch_size": 64, "learning_rate": 0.01, "ema_decay": 0.99}
        }"#,
    );
    let run = ok(fmdt(&["train", "--config", "train.json"], tmp.path()));
    fs::copy(run.join("checkpoint.json"), tmp.path().join("one.json")).unwrap();
    write(
        tmp.path(),
        "sample.json",
        r#"{"model": {"kind": "checkpoint", "path": "one.json"}, "n_samples": 1, "record_trajectories": 1}"#,
    );
    let run = ok(fmdt(&["sample", "--config", "sample.json"], tmp.path()));
    let ends = Dataset::load(run.join("endpoints.fmdt")).unwrap();
    assert_eq!(ends.len(), 1);
    let (_, d2) = data.nearest(ends.row(0));
    assert!(d2.sqrt() < 0.05, "{:?}", ends.row(0));
    assert!(run.join("trajectory-0.csv").is_file());
}

#[test]
fn psnr_is_reproducible_and_replayable() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "train", r#"{"kind": "blobs8x8", "n": 20}"#);
    gen(tmp.path(), "test", r#"{"kind": "blobs8x8", "n": 30}"#);
    write(
        tmp.path(),
        "psnr.json",
        r#"{
            "model": {"kind": "closed-form", "dataset": "train.fmdt"},
            "perturbation": {"spec": {"direction": {"kind": "checkerboard", "patch_size": 2},
                                      "t_min": 0.2, "t_max": 0.6,
                                      "level": {"kind": "calibrated-psnr-ratio", "ratio": 0.9}},
                             "calibration": {"n_eval": 16, "nodes": 3}},
            "test_dataset": "test.fmdt",
            "grid": {"n": 6},
            "n_eval": 16
        }"#,
    );
    let a = ok(fmdt(&["psnr", "--config", "psnr.json", "--threads", "1"], tmp.path()));
    let b = ok(fmdt(&["psnr", "--config", "psnr.json", "--threads", "3"], tmp.path()));
    let csv = fs::read(a.join("psnr.csv")).unwrap();
    assert_eq!(csv, fs::read(b.join("psnr.csv")).unwrap());
    assert!(String::from_utf8_lossy(&csv).lines().count() == 7);
    assert!(a.join("calibration.json").is_file());

    let manifest = a.join("manifest.json");
    let c = ok(fmdt(&["replay", manifest.to_str().unwrap()], tmp.path()));
    assert_eq!(c.parent(), a.parent());
    assert_eq!(csv, fs::read(c.join("psnr.csv")).unwrap());

    // Replays refuse changed inputs.
    gen(tmp.path(), "test", r#"{"kind": "blobs8x8", "n": 31}"#);
    let r = fmdt(&["replay", manifest.to_str().unwrap()], tmp.path());
    assert_eq!(r.code, 1, "{}", r.stderr);
}

#[test]
fn manifests_hash_inputs_and_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    gen(tmp.path(), "pts", r#"{"kind": "k-point", "k": 5, "dim": 2, "scale": 1.0}"#);
    write(
        tmp.path(),
        "l.json",
        r#"{"model": {"kind": "closed-form", "dataset": "pts.fmdt"}, "n_traj": 4, "grid": {"n": 5},
            "integrator": {"scheme": "rk4", "steps": 50}}"#,
    );
    let dir = ok(fmdt(&["lipschitz", "--config", "l.json"], tmp.path()));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "lipschitz");
    assert_eq!(m["inputs"][0]["name"], "model.dataset");
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
    assert!(m["config"]["model"]["dataset"].as_str().unwrap().starts_with('/'));
    let names: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|o| o["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["lipschitz.csv", "summary.json"]);
    assert!(!String::from_utf8(fs::read(dir.join("manifest.json")).unwrap()).unwrap().contains("time"));
}

#[test]
fn inpainting_recovers_the_consistent_point() {
    let tmp = tempfile::tempdir().unwrap();
    let train = Dataset::from_rows("two", vec![vec![1.0, 0.5], vec![-1.0, 0.5]], None).unwrap();
    train.save(tmp.path().join("two.fmdt")).unwrap();
    Dataset::from_rows("gt", vec![vec![1.0, 0.5]], None).unwrap().save(tmp.path().join("gt.fmdt")).unwrap();
    write(
        tmp.path(),
        "inp.json",
        r#"{"model": {"kind": "closed-form", "dataset": "two.fmdt"}, "images": "gt.fmdt",
            "mask": {"kind": "leading", "fraction": 0.5}, "data_max": 2.0}"#,
    );
    let dir = ok(fmdt(&["inpaint", "--config", "inp.json"], tmp.path()));
    let out = Dataset::load(dir.join("restored.fmdt")).unwrap();
    assert!((out.row(0)[0] - 1.0).abs() < 0.05 && (out.row(0)[1] - 0.5).abs() < 0.05, "{:?}", out.row(0));
}

#[test]
fn bad_thread_env_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    write(tmp.path(), "g.json", r#"{"spec": {"kind": "preset", "name": "fig5a-3pt"}}"#);
    let out = Command::new(env!("CARGO_BIN_EXE_fmdt"))
        .args(["gen-data", "--config", "g.json"])
        .current_dir(tmp.path())
        .env("FMDT_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("FMDT_THREADS"));
}
