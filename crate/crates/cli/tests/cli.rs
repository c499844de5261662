use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_color-lab"));
    c.env_remove("COLOR_LAB_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: [&str; 10] = [
    "--set",
    "model.height=16",
    "--set",
    "model.width=16",
    "--set",
    "model.mask_size=8",
    "--set",
    "batch_size=2",
    "--set",
    "model.gcn_layers=2",
];

/// A 16x16 corpus of `n` scenes in `dir`.
fn corpus(dir: &Path, n: usize) -> PathBuf {
    let path = dir.join("data.jsonl");
    ok(&["gen-data", "-n", &n.to_string(), "--seed", "7", "--height", "16", "--width", "16", "--out", s(&path)]);
    path
}

fn train(data: &Path, out: &Path, steps: u64, extra: &[&str]) -> Output {
    let steps = steps.to_string();
    let mut args = vec!["train", "--dataset", s(data), "--out", s(out), "--steps", &steps];
    args.extend(SMALL);
    args.extend(extra);
    run(&args)
}

#[test]
fn gen_data_is_replayable() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    let out = ok(&["gen-data", "-n", "100", "--seed", "7", "--out", s(&a)]);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["scenes"], 100);
    assert!(summary["duplication"]["distinct_graphs"].as_u64().unwrap() > 0);
    bin().args(["gen-data", "-n", "100", "--out", s(&b)]).env("COLOR_LAB_SEED", "7").output().unwrap();
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let header: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(header["count"], 100);
    assert_eq!(text.lines().count(), 101);
}

#[test]
fn gen_data_empty_warns() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("empty.jsonl");
    let out = ok(&["gen-data", "-n", "0", "--out", s(&path)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 1);
}

#[test]
fn train_smoke_and_replay() {
    let dir = TempDir::new().unwrap();
    let data = corpus(dir.path(), 24);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = train(&data, out, 10, &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let log = fs::read_to_string(a.join("train.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 10);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    assert_eq!(first["step"], 1);
    assert!(first["L_d"].is_number());
    assert_eq!(log, fs::read_to_string(b.join("train.jsonl")).unwrap());
    assert_eq!(fs::read(a.join("checkpoint.ckpt")).unwrap(), fs::read(b.join("checkpoint.ckpt")).unwrap());
}

#[test]
fn ablation_drops_discriminator_loss() {
    let dir = TempDir::new().unwrap();
    let data = corpus(dir.path(), 12);
    let out = dir.path().join("run");
    assert!(train(&data, &out, 3, &["--ablate", "no-discriminator"]).status.success());
    for line in fs::read_to_string(out.join("train.jsonl")).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("L_d").is_none() && v.get("L_g").is_none());
    }
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    let data = corpus(dir.path(), 16);
    let (full, part) = (dir.path().join("full"), dir.path().join("part"));
    assert!(train(&data, &full, 8, &[]).status.success());
    assert!(train(&data, &part, 5, &[]).status.success());
    let ckpt = part.join("checkpoint.ckpt");
    let o = train(&data, &part, 8, &["--resume", s(&ckpt)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let steps: Vec<u64> = fs::read_to_string(part.join("train.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["step"].as_u64().unwrap())
        .collect();
    assert_eq!(steps, (1..=8).collect::<Vec<_>>());
    assert_eq!(fs::read(full.join("train.jsonl")).unwrap(), fs::read(part.join("train.jsonl")).unwrap());
    assert_eq!(fs::read(full.join("checkpoint.ckpt")).unwrap(), fs::read(&ckpt).unwrap());
}

#[test]
fn resume_rejects_changed_config() {
    let dir = TempDir::new().unwrap();
    let data = corpus(dir.path(), 8);
    let out = dir.path().join("run");
    assert!(train(&data, &out, 2, &[]).status.success());
    let ckpt = out.join("checkpoint.ckpt");
    let o = train(&data, &out, 4, &["--resume", s(&ckpt), "--set", "model.gcn_hidden=32"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("model.gcn_hidden"));
}

#[test]
fn train_names_grid_mismatch() {
    let dir = TempDir::new().unwrap();
    let data = corpus(dir.path(), 4);
    let o = run(&["train", "--dataset", s(&data), "--out", s(&dir.path().join("x")), "--steps", "1"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("H is 16") && err.contains("expects 32"), "{err}");
}

#[test]
fn eval_reports() {
    let dir = TempDir::new().unwrap();
    let data = corpus(dir.path(), 12);
    let out = ok(&["eval", "--dataset", s(&data), "--ground-truth"]);
    let table = String::from_utf8_lossy(&out.stdout).to_string();
    let row = table.lines().nth(1).unwrap();
    assert!(row.starts_with("ground truth") && row.contains("1.000"), "{table}");

    let run_dir = dir.path().join("run");
    assert!(train(&data, &run_dir, 2, &[]).status.success());
    let ckpt = run_dir.join("checkpoint.ckpt");
    let (r1, r2) = (dir.path().join("r1.json"), dir.path().join("r2.json"));
    for r in [&r1, &r2] {
        ok(&["eval", "--dataset", s(&data), "--checkpoint", s(&ckpt), "-k", "5", "--out", s(r)]);
    }
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&r1).unwrap()).unwrap();
    assert!(report["diversity"].is_number());
    assert_eq!(fs::read(&r1).unwrap(), fs::read(&r2).unwrap());

    let missing = run(&["eval", "--dataset", s(&data), "--checkpoint", s(&dir.path().join("nope.ckpt"))]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nope.ckpt"));
}

fn ppm_pixels(path: &Path) -> Vec<[u8; 3]> {
    let text = fs::read_to_string(path).unwrap();
    let nums: Vec<u8> = text.split_whitespace().skip(4).map(|t| t.parse().unwrap()).collect();
    nums.chunks(3).map(|c| [c[0], c[1], c[2]]).collect()
}

#[test]
fn render_outputs() {
    let dir = TempDir::new().unwrap();
    let data = corpus(dir.path(), 4);
    let out = dir.path().join("img");
    ok(&["render", "--dataset", s(&data), "--scene", "2", "--out", s(&out)]);
    let hard = ppm_pixels(&out.join("scene2_hard.ppm"));
    assert_eq!(hard.len(), 256);
    assert!(hard.iter().all(|p| *p != [0, 0, 0]));

    let run_dir = dir.path().join("run");
    assert!(train(&data, &run_dir, 1, &[]).status.success());
    let graph = dir.path().join("graph.json");
    fs::write(&graph, r#"{"nodes":[[0,0],[1,7]],"edges":[[1,3,0]],"dummy":false}"#).unwrap();
    let ckpt = run_dir.join("checkpoint.ckpt");
    ok(&["render", "--checkpoint", s(&ckpt), "--graph", s(&graph), "--seeds", "1,2", "--out", s(&out)]);
    for seed in [1, 2] {
        for kind in ["soft", "hard"] {
            assert!(out.join(format!("seed{seed}_{kind}.ppm")).exists());
        }
    }
    assert_ne!(fs::read(out.join("seed1_soft.ppm")).unwrap(), fs::read(out.join("seed2_soft.ppm")).unwrap());

    fs::write(&graph, r#"{"nodes":[[0,99]],"edges":[],"dummy":false}"#).unwrap();
    let bad = run(&["render", "--checkpoint", s(&ckpt), "--graph", s(&graph), "--out", s(&out)]);
    assert!(!bad.status.success());
}

#[test]
fn stats_summaries() {
    let dir = TempDir::new().unwrap();
    let data = corpus(dir.path(), 10);
    let out = ok(&["stats", "--dataset", s(&data)]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["scenes"], 10);
    assert_eq!(v["H"], 16);

    let run_dir = dir.path().join("run");
    assert!(train(&data, &run_dir, 3, &[]).status.success());
    let out = ok(&["stats", "--log", s(&run_dir.join("train.jsonl"))]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("L_total") && text.contains("L_d"));
}
