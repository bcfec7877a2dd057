//! End-to-end tests of the `gacr` binary: exit codes, artifact flow, and
//! subcommand wiring at a small scale.

use std::path::Path;
use std::process::{Command, Output};

fn gacr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gacr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path) {
    let config = r#"
seed = 11

[paths]
train = "out/synth_train.jsonl"
test = "out/synth_test.jsonl"
cache = "out/snippets.jsonl"
checkpoint = "out/model.ckpt"
vocab = "out/vocab.txt"
index = "out/pool.idx"
out_dir = "out"

[encoder]
num_layers = 1
num_heads = 2
model_dim = 16
ffn_dim = 32
max_seq_len = 96
mask_type = "A"

[training]
batch_size = 8
epochs = 2
learning_rate = 1e-3
adam_beta1 = 0.9
adam_beta2 = 0.999
adam_eps = 1e-8
mode = "gacr_s"
snippet_cap = 32
k = 2
loss_form = "log_softmax"

[retrieval]
pool_cap = 0
top_k = 5
variants = ["doc_only", "gacr_s"]

[synth]
num_pairs = 40
holdout = 12
keep_rate = 0.3
"#;
    std::fs::write(dir.join("config.toml"), config).unwrap();
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let cfg = ["--config", "config.toml"];

    assert_ok(&gacr(dir.path(), &[&cfg[..], &["synth"]].concat()), "synth");
    assert!(dir.path().join("out/synth_train.jsonl").exists());

    let out = gacr(dir.path(), &[&cfg[..], &["ingest"]].concat());
    assert_ok(&out, "ingest");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("train: 28 pairs"), "{stdout}");
    assert!(stdout.contains("test: 12 pairs"), "{stdout}");

    assert_ok(&gacr(dir.path(), &[&cfg[..], &["gen"]].concat()), "gen");
    assert_ok(&gacr(dir.path(), &[&cfg[..], &["train"]].concat()), "train");
    assert!(dir.path().join("out/model.ckpt").exists());
    assert!(dir.path().join("out/vocab.txt").exists());
    let loss_log = std::fs::read_to_string(dir.path().join("out/loss.log")).unwrap();
    assert_eq!(loss_log.lines().count(), 2);
    assert!(loss_log.starts_with("epoch 1 loss "));

    // eval before index: operational failure naming the missing artifact
    let out = gacr(dir.path(), &[&cfg[..], &["eval"]].concat());
    assert_eq!(out.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("index not found"),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    assert_ok(&gacr(dir.path(), &[&cfg[..], &["index"]].concat()), "index");
    assert!(dir.path().join("out/pool.idx").exists());

    let out = gacr(dir.path(), &[&cfg[..], &["eval"]].concat());
    assert_ok(&out, "eval");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("doc_only"), "{stdout}");
    assert!(stdout.contains("superior queries vs doc_only"), "{stdout}");
    assert!(dir.path().join("out/eval_report.jsonl").exists());
    assert!(dir.path().join("out/ranks_gacr_s.txt").exists());

    let out = gacr(
        dir.path(),
        &[&cfg[..], &["search", "--query", "merge sorted lists"]].concat(),
    );
    assert_ok(&out, "search");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 5, "{stdout}");
    assert!(stdout.contains("synth-"), "{stdout}");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());

    // unknown subcommand (clap)
    let out = gacr(dir.path(), &["--config", "config.toml", "frobnicate"]);
    assert_eq!(out.status.code(), Some(2));

    // unknown flag (clap)
    let out = gacr(dir.path(), &["--config", "config.toml", "train", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));

    // empty query (manual validation)
    let out = gacr(
        dir.path(),
        &["--config", "config.toml", "search", "--query", "  "],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-empty"));

    // unknown sweep axis (manual validation)
    let out = gacr(
        dir.path(),
        &["--config", "config.toml", "sweep", "--axis", "sideways"],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn operational_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    // train without a corpus file
    let out = gacr(dir.path(), &["--config", "config.toml", "train"]);
    assert_eq!(out.status.code(), Some(1));

    // config with unknown keys is rejected
    std::fs::write(dir.path().join("bad.toml"), "mystery = true\n").unwrap();
    let out = gacr(dir.path(), &["--config", "bad.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mystery"));
}

#[test]
fn gradcheck_passes_on_the_default_tiny_config() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let out = gacr(
        dir.path(),
        &["--config", "config.toml", "gradcheck", "--probes", "60"],
    );
    assert_ok(&out, "gradcheck");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("max relative error"), "{stdout}");
}

#[test]
fn sweep_emits_the_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let cfg = ["--config", "config.toml"];
    assert_ok(&gacr(dir.path(), &[&cfg[..], &["synth"]].concat()), "synth");
    assert_ok(&gacr(dir.path(), &[&cfg[..], &["gen"]].concat()), "gen");

    let out = gacr(dir.path(), &[&cfg[..], &["sweep", "--axis", "mask"]].concat());
    assert_ok(&out, "sweep mask");
    let stdout = String::from_utf8_lossy(&out.stdout);
    for mask in ["A", "B", "C", "D"] {
        assert!(stdout.lines().any(|l| l.starts_with(mask)), "{stdout}");
    }
    let jsonl =
        std::fs::read_to_string(dir.path().join("out/sweep_mask.jsonl")).unwrap();
    assert!(jsonl.contains("\"value\":\"D\""));

    let out = gacr(dir.path(), &[&cfg[..], &["sweep", "--axis", "cap"]].concat());
    assert_ok(&out, "sweep cap");
    let stdout = String::from_utf8_lossy(&out.stdout);
    for cap in ["32", "64", "128"] {
        assert!(stdout.lines().any(|l| l.starts_with(cap)), "{stdout}");
    }
}

#[test]
fn seed_override_changes_artifacts_coherently() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let cfg = ["--config", "config.toml"];
    assert_ok(&gacr(dir.path(), &[&cfg[..], &["synth"]].concat()), "synth");
    assert_ok(&gacr(dir.path(), &[&cfg[..], &["train"]].concat()), "train");
    let first = std::fs::read(dir.path().join("out/model.ckpt")).unwrap();

    // same seed, fresh run: identical checkpoint
    assert_ok(&gacr(dir.path(), &[&cfg[..], &["train"]].concat()), "train again");
    let second = std::fs::read(dir.path().join("out/model.ckpt")).unwrap();
    assert_eq!(first, second);

    // overridden seed: different checkpoint
    assert_ok(
        &gacr(dir.path(), &[&cfg[..], &["--seed", "99", "train"]].concat()),
        "train seed 99",
    );
    let third = std::fs::read(dir.path().join("out/model.ckpt")).unwrap();
    assert_ne!(first, third);
}
