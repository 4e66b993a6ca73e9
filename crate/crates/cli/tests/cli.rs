use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use neft_core::channel::ChannelDataset;

fn neft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_neft")).args(args).env_remove("NEFT_OUT_DIR").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = neft(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    neft(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// 16x16 samples from a 256-element array.
fn small_data(dir: &Path, name: &str, count: usize, seed: u64) -> PathBuf {
    let p = dir.join(name);
    ok(&["gen-data", "--n1", "256", "--count", &count.to_string(), "--seed", &seed.to_string(), "--out", s(&p)]);
    p
}

fn quick_train(dir: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let train = dir.join("train.bin");
    let val = dir.join("val.bin");
    let out = dir.join(out);
    let mut args = vec!["train", "--data", s(&train), "--val", s(&val), "--epochs", "2", "--batch-size", "4", "--lr", "1e-3", "--out", s(&out)];
    if !extra.contains(&"--c1") {
        args.extend_from_slice(&["--c1", "8"]);
    }
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path(), "train.bin", 8, 1);
    small_data(dir.path(), "val.bin", 4, 2);
    dir
}

#[test]
fn gen_data_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.bin");
    let stdout = ok(&["gen-data", "--count", "100", "--seed", "17", "--out", s(&p)]);
    assert!(stdout.contains("5232.645"), "{stdout}");
    let d = ChannelDataset::load(&p).unwrap();
    assert_eq!((d.len(), d.seed, d.input_shape()), (100, 17, [2, 32, 32]));
    assert_eq!(code(&["gen-data", "--count", "100", "--out", s(&p)]), 2);
    ok(&["gen-data", "--count", "3", "--out", s(&p), "--force"]);
}

#[test]
fn gen_data_rejects_bad_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.bin");
    assert_eq!(code(&["gen-data", "--r-lo", "0.5", "--r-hi", "0.5", "--out", s(&p)]), 2);
    assert_eq!(code(&["gen-data", "--r-lo", "0.6", "--r-hi", "0.2", "--out", s(&p)]), 2);
    assert!(!p.exists());
    assert_eq!(code(&["gen-data", "--bogus"]), 2);
}

#[test]
fn train_writes_artifacts_and_is_reproducible() {
    let dir = setup();
    let a = quick_train(dir.path(), "a", &["--seed", "3"]);
    for f in ["checkpoint.ckpt", "report.json", "curves.csv"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    let b = quick_train(dir.path(), "b", &["--seed", "3"]);
    let strip = |p: &Path| {
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        v["run_config"]["paths"]["out"] = serde_json::Value::Null;
        v
    };
    assert_eq!(strip(&a.join("report.json")), strip(&b.join("report.json")));

    let first = fs::read(a.join("report.json")).unwrap();
    let copy = dir.path().join("first.json");
    fs::write(&copy, &first).unwrap();
    assert_eq!(code(&["train", "--config", s(&copy)]), 2, "existing output must be refused");
    ok(&["train", "--config", s(&copy), "--force"]);
    assert_eq!(fs::read(a.join("report.json")).unwrap(), first);

    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["tool_version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(report["run_config"]["model"]["c1"], 8);
    assert_eq!(report["status"], "ok");
    let curves = fs::read_to_string(a.join("curves.csv")).unwrap();
    assert!(curves.starts_with("# {"));
    assert_eq!(curves.lines().count(), 4);
}

#[test]
fn divergence_exits_with_numeric_code_and_keeps_checkpoint() {
    let dir = setup();
    let out = dir.path().join("nan");
    let (train, val) = (dir.path().join("train.bin"), dir.path().join("val.bin"));
    let args = ["train", "--data", s(&train), "--val", s(&val), "--c1", "8", "--epochs", "3", "--batch-size", "4", "--lr", "1e30", "--out", s(&out)];
    let o = neft(&args);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("diverged"));
    assert!(out.join("checkpoint.ckpt").is_file());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["status"], "diverged");
}

#[test]
fn zero_weight_distillation_matches_plain_training() {
    let dir = setup();
    let teacher = quick_train(dir.path(), "teacher", &[]);
    let student = quick_train(dir.path(), "student", &["--variant", "Compact", "--c1", "4", "--seed", "9"]);
    let kd = dir.path().join("kd");
    ok(&[
        "distill", "--teacher", s(&teacher.join("checkpoint.ckpt")), "--lambdas", "0,0,0", "--c1", "4", "--seed", "9",
        "--data", s(&dir.path().join("train.bin")), "--val", s(&dir.path().join("val.bin")),
        "--epochs", "2", "--batch-size", "4", "--lr", "1e-3", "--out", s(&kd),
    ]);
    let read = |p: PathBuf| -> serde_json::Value { serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap() };
    let (a, b) = (read(student.join("report.json")), read(kd.join("report.json")));
    assert_eq!(a["final"], b["final"]);
    assert_eq!(a["model"], b["model"]);
    let epochs = |r: &serde_json::Value| -> Vec<(serde_json::Value, serde_json::Value)> {
        r["training"]["epochs"].as_array().unwrap().iter().map(|e| (e["val"].clone(), e["losses"]["total"].clone())).collect()
    };
    assert_eq!(epochs(&a), epochs(&b));
    let lines = fs::read_to_string(kd.join("distill.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 3);
    assert!(lines.lines().nth(1).unwrap().contains("\"val_nmse_db\""));
}

#[test]
fn distill_rejects_incompatible_student() {
    let dir = setup();
    let ckpt = quick_train(dir.path(), "teacher", &[]).join("checkpoint.ckpt");
    let (train, val, kd) = (dir.path().join("train.bin"), dir.path().join("val.bin"), dir.path().join("kd"));
    let args = ["distill", "--teacher", s(&ckpt), "--c1", "16", "--data", s(&train), "--val", s(&val), "--out", s(&kd)];
    assert_eq!(code(&args), 2);
    assert!(!dir.path().join("kd").exists());
}

#[test]
fn eval_export_and_compare() {
    let dir = setup();
    let run = quick_train(dir.path(), "run", &[]);
    let ckpt = run.join("checkpoint.ckpt");
    let val = dir.path().join("val.bin");
    let ev = dir.path().join("eval");
    let stdout = ok(&["eval", "--checkpoint", s(&ckpt), "--data", s(&val), "--out", s(&ev)]);
    assert!(stdout.contains("NMSE"));
    let e: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("eval.json")).unwrap()).unwrap();
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(e["metrics"], r["final"]["metrics"]);
    assert_eq!(e["command"], "eval");

    let big = small_data(dir.path(), "big.bin", 2, 3);
    let wide = dir.path().join("wide.bin");
    ok(&["gen-data", "--count", "2", "--out", s(&wide)]);
    assert_eq!(code(&["eval", "--checkpoint", s(&ckpt), "--data", s(&wide), "--out", s(&dir.path().join("e2"))]), 2);

    let attn = dir.path().join("attn");
    ok(&["export-attn", "--checkpoint", s(&ckpt), "--data", s(&big), "--sample-index", "1", "--out", s(&attn)]);
    let index: serde_json::Value = serde_json::from_str(&fs::read_to_string(attn.join("attention.json")).unwrap()).unwrap();
    let maps = index["maps"].as_array().unwrap();
    assert_eq!(maps.len(), 4 * 4);
    let text = fs::read_to_string(attn.join(maps[0]["file"].as_str().unwrap())).unwrap();
    for line in text.lines().skip(2) {
        let sum: f64 = line.split(',').skip(1).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() < 1e-5);
    }
    assert_eq!(code(&["export-attn", "--checkpoint", s(&ckpt), "--data", s(&big), "--sample-index", "2", "--out", s(&dir.path().join("a2"))]), 2);

    let g32 = quick_train(dir.path(), "g32", &["--gamma", "32"]);
    let g8 = quick_train(dir.path(), "g8", &["--gamma", "8"]);
    let cmp = dir.path().join("cmp");
    let stdout = ok(&[
        "compare", "--reports", s(&g32.join("report.json")), s(&run.join("report.json")), s(&g8.join("report.json")), "--out", s(&cmp),
    ]);
    assert!(stdout.contains("NMSE (dB)"));
    let csv = fs::read_to_string(cmp.join("compare.csv")).unwrap();
    let gammas: Vec<&str> = csv.lines().skip(2).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(gammas, ["8", "16", "32"]);
}

#[test]
fn flops_reports_attention_subtotal() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f");
    let stdout = ok(&["flops", "--variant", "NEFT", "--gamma", "16", "--out", s(&out)]);
    assert!(stdout.contains("860,160"), "{stdout}");
    let j: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("flops.json")).unwrap()).unwrap();
    assert_eq!(j["report"]["model"], "NEFT");
    assert!(out.join("flops.txt").is_file());
}

#[test]
fn config_files_are_strict() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"train": {"epochz": 3}}"#).unwrap();
    assert_eq!(code(&["flops", "--config", s(&cfg), "--out", s(&dir.path().join("f"))]), 2);
    fs::write(&cfg, r#"{"model": {"variant": "Hybrid", "gamma": 32}}"#).unwrap();
    let stdout = ok(&["flops", "--config", s(&cfg), "--out", s(&dir.path().join("g"))]);
    assert!(stdout.contains("NEFT-Hybrid"), "{stdout}");
}

#[test]
fn out_dir_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_neft")).args(["flops"]).env("NEFT_OUT_DIR", dir.path()).output().unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("flops").join("flops.json").is_file());
}
