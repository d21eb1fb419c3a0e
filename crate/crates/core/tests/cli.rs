//! Drives the `symflow` binary through a small end-to-end run.

use std::path::Path;
use std::process::{Command, Output};

use symflow::harness::{ArchConfig, ExperimentConfig, ModelKind};
use symflow::kosc::TaskVariant;
use symflow::metrics::{ci95, mean, MetricReport};
use symflow::param2tok::{ASSIGNMENT_CSV, ASSIGNMENT_ORDER_CSV, Z_OUT_SIMILARITY_CSV, Z_SIMILARITY_CSV};

fn symflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_symflow")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = symflow(args);
    assert!(
        out.status.success(),
        "symflow {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, variant: &str, count: usize, seed: u64, n: usize) -> std::path::PathBuf {
    let out = dir.join(name);
    ok(&[
        "gen-data",
        "--k",
        "2",
        "--variant",
        variant,
        "--count",
        &count.to_string(),
        "--seed",
        &seed.to_string(),
        "--n-samples",
        &n.to_string(),
        "--out",
        p(&out),
    ]);
    out
}

fn toy_config(dir: &Path, model: ModelKind, task: TaskVariant, n: usize) -> std::path::PathBuf {
    let cfg = ExperimentConfig {
        model,
        k: 2,
        task,
        steps: 3,
        batch_size: 4,
        lr: 1e-3,
        sampler_steps: 4,
        log_every: 1,
        arch: ArchConfig {
            n_samples: n,
            ..ArchConfig::toy()
        },
        ..Default::default()
    };
    let path = dir.join(format!("{}.toml", model.name()));
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn generate_train_eval_sample_export() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let train = gen(d, "train", "symmetric", 16, 1, 2048);
    let test = gen(d, "test", "symmetric", 6, 2, 2048);

    let cfg = toy_config(d, ModelKind::CnfParam2Tok, TaskVariant::Symmetric, 2048);
    let run = d.join("run");
    ok(&[
        "train",
        "--config",
        p(&cfg),
        "--train-data",
        p(&train),
        "--out",
        p(&run),
    ]);
    for f in ["model.ckpt", "train_log.csv", "config.toml"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4, "{log}");
    let saved = ExperimentConfig::load(&run.join("config.toml")).unwrap();
    assert_eq!(saved.model, ModelKind::CnfParam2Tok);
    assert_eq!(saved.train_data.as_deref(), Some(train.as_path()));

    let csv = d.join("eval.csv");
    let ckpt = run.join("model.ckpt");
    let stdout = ok(&[
        "eval",
        "--ckpt",
        p(&ckpt),
        "--data",
        p(&test),
        "--out-csv",
        p(&csv),
        "--extended",
    ]);
    assert!(stdout.contains("lac:"), "{stdout}");
    let text = std::fs::read_to_string(&csv).unwrap();
    let report = MetricReport::from_csv(&text).unwrap();
    assert_eq!(report.items.len(), 6);
    assert_eq!(report.metrics, ["lsd", "lac", "mss", "wmfcc", "sot", "rms_cosine"]);
    // The trailing row holds the column means and 95% half-widths.
    let last: Vec<f64> = text
        .lines()
        .last()
        .unwrap()
        .split(',')
        .skip(1)
        .map(|c| c.parse().unwrap())
        .collect();
    for (m, name) in report.metrics.iter().enumerate() {
        let col = report.column(name).unwrap();
        assert_eq!(last[m], mean(&col));
        assert_eq!(last[report.metrics.len() + m], ci95(&col));
    }
    // Evaluation is reproducible for a fixed seed.
    let csv2 = d.join("eval2.csv");
    ok(&[
        "eval",
        "--ckpt",
        p(&ckpt),
        "--data",
        p(&test),
        "--out-csv",
        p(&csv2),
        "--extended",
    ]);
    assert_eq!(text, std::fs::read_to_string(&csv2).unwrap());

    let est: Vec<f64> = serde_json::from_str(&ok(&[
        "sample",
        "--ckpt",
        p(&ckpt),
        "--audio-in",
        p(&test),
        "--index",
        "3",
    ]))
    .unwrap();
    assert_eq!(est.len(), 6);
    assert!(est.iter().all(|v| v.is_finite()));

    let p2t = d.join("p2t");
    ok(&["export-p2t", "--ckpt", p(&ckpt), "--out-dir", p(&p2t)]);
    for f in [
        ASSIGNMENT_CSV,
        ASSIGNMENT_ORDER_CSV,
        Z_SIMILARITY_CSV,
        Z_OUT_SIMILARITY_CSV,
    ] {
        assert!(p2t.join(f).exists(), "missing {f}");
    }
}

#[test]
fn sample_reads_raw_f32_audio() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = toy_config(d, ModelKind::FfnMse, TaskVariant::Asymmetric, 64);
    let run = d.join("run");
    let train = gen(d, "train", "asymmetric", 8, 3, 64);
    ok(&[
        "train",
        "--config",
        p(&cfg),
        "--task",
        "asymmetric",
        "--train-data",
        p(&train),
        "--out",
        p(&run),
    ]);
    let raw = d.join("audio.f32");
    let bytes: Vec<u8> = (0..64).flat_map(|i| ((i as f32 * 0.3).sin()).to_le_bytes()).collect();
    std::fs::write(&raw, bytes).unwrap();
    let ckpt = run.join("model.ckpt");
    let a = ok(&["sample", "--ckpt", p(&ckpt), "--audio-in", p(&raw)]);
    let est: Vec<f64> = serde_json::from_str(&a).unwrap();
    assert_eq!(est.len(), 6);
}

#[test]
fn invalid_requests_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let asym = gen(d, "asym", "asymmetric", 4, 4, 64);
    let cfg = toy_config(d, ModelKind::FfnSort, TaskVariant::Asymmetric, 64);
    let out = symflow(&[
        "train",
        "--config",
        p(&cfg),
        "--train-data",
        p(&asym),
        "--out",
        p(&d.join("x")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = symflow(&["check", "--suite", "nonsense"]);
    assert!(!out.status.success());

    let cfg = toy_config(d, ModelKind::FfnMse, TaskVariant::Symmetric, 64);
    let run = d.join("run");
    let sym = gen(d, "sym", "symmetric", 4, 5, 64);
    ok(&["train", "--config", p(&cfg), "--train-data", p(&sym), "--out", p(&run)]);
    let out = symflow(&[
        "export-p2t",
        "--ckpt",
        p(&run.join("model.ckpt")),
        "--out-dir",
        p(&d.join("p")),
    ]);
    assert!(!out.status.success(), "FFN checkpoints have no Param2Tok projection");
    let out = symflow(&[
        "sample",
        "--ckpt",
        p(&run.join("model.ckpt")),
        "--audio-in",
        p(&sym),
        "--index",
        "99",
    ]);
    assert!(!out.status.success());
}

#[test]
fn check_suite_reports_each_check() {
    let stdout = ok(&["check", "--suite", "fixture"]);
    assert!(stdout.starts_with("PASS "), "{stdout}");
}
