//! End-to-end runs of the `dimo` binary on a tiny configuration.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: [&str; 16] = [
    "--set",
    "model.d_model=16",
    "--set",
    "model.heads=2",
    "--set",
    "model.ffn=32",
    "--set",
    "model.layers=1",
    "--set",
    "rvq.codebook=16",
    "--set",
    "rvq.iterations=5",
    "--set",
    "eval.embed_steps=20",
    "--set",
    "train.batch_size=8",
];

fn dimo(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dimo"))
        .env("DIMO_LOG", "warn")
        .arg("--out")
        .arg(out)
        .args(["--seed", "5"])
        .args(TINY)
        .args(args)
        .output()
        .expect("run dimo")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = dimo(out, args);
    assert!(o.status.success(), "dimo {args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn pipeline(out: &Path) {
    ok(out, &["corpus", "--count", "60"]);
    ok(out, &["tokenizer"]);
    ok(out, &["train", "--steps", "4"]);
}

#[test]
fn rate_prints_token_and_bit_rates() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["tokenizer", "--rate", "--fps", "20", "--layers", "6", "--downsample", "4", "--codebook", "1024"]);
    assert_eq!(stdout.trim(), "30 tokens/s, 300 bits/s");
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(dimo(dir.path(), &["--set", "model.depth=3", "corpus"]).status.code(), Some(2));
    assert_eq!(dimo(dir.path(), &["--set", "train.steps=many", "corpus"]).status.code(), Some(2));
    assert_eq!(dimo(dir.path(), &["corpus", "--no-such-flag"]).status.code(), Some(2));
    let ini = dir.path().join("bad.ini");
    fs::write(&ini, "[decode]\nsteps = 4\nwarp = 9\n").unwrap();
    assert_eq!(dimo(dir.path(), &["--config", ini.to_str().unwrap(), "corpus"]).status.code(), Some(2));
}

#[test]
fn missing_input_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = dimo(dir.path(), &["tokenizer", "--corpus", "does/not/exist.tsv"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exist.tsv"));
}

#[test]
fn config_file_and_overrides_are_resolved() {
    let dir = tempfile::tempdir().unwrap();
    let ini = dir.path().join("run.ini");
    fs::write(&ini, "# corpus size\n[corpus]\ncount = 12\n\n[decode]\nsteps = 7\n").unwrap();
    ok(dir.path(), &["--config", ini.to_str().unwrap(), "--set", "decode.steps=9", "corpus"]);
    let resolved = fs::read_to_string(dir.path().join("resolved_config.ini")).unwrap();
    assert!(resolved.contains("count = 12"), "{resolved}");
    assert!(resolved.contains("steps = 9"), "{resolved}");
    let corpus = fs::read_to_string(dir.path().join("corpus.tsv")).unwrap();
    assert_eq!(corpus.lines().filter(|l| l.starts_with("rec")).count(), 12);
}

#[test]
fn seeded_reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for file in ["corpus.tsv", "vocab.txt", "codebooks.bin", "tokenizer_report.csv", "model.ckpt", "train_loss.csv"] {
        let x = fs::read(a.path().join(file)).unwrap();
        let y = fs::read(b.path().join(file)).unwrap();
        assert!(!x.is_empty(), "{file} is empty");
        assert!(x == y, "{file} differs between seeded runs");
    }
}

#[test]
fn sample_eval_and_pareto_run_on_a_tiny_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    pipeline(out);
    let corpus = fs::read_to_string(out.join("corpus.tsv")).unwrap();
    let record = corpus.lines().find(|l| l.starts_with("rec")).unwrap().split('\t').next().unwrap().to_string();

    for steps in ["1", "20"] {
        let stdout = ok(out, &["sample", "t2m", "--record", &record, "--steps", steps, "--csv"]);
        assert!(stdout.starts_with("sample000\t"), "{stdout}");
        assert!(out.join("samples.tsv").exists() && out.join("sample000.csv").exists());
        let trace = fs::read_to_string(out.join("samples.trace")).unwrap();
        assert!(!trace.is_empty());
    }
    let stdout = ok(out, &["sample", "m2t", "--record", &record, "--count", "2"]);
    assert_eq!(stdout.lines().count(), 2);

    ok(out, &["eval", "--ground-truth"]);
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let fid: f64 = row[header.iter().position(|h| *h == "fid").unwrap()].parse().unwrap();
    assert!(fid.abs() < 1e-6, "ground-truth FID {fid}");
    assert!(out.join("metrics_config.txt").exists());

    ok(out, &["pareto", "--steps-list", "1,2"]);
    let sweep = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);
    assert!(out.join("latency.csv").exists());
}
