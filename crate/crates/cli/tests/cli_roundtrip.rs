//! Black-box tests of the `seqlab` binary: config error reporting, edge
//! cases around empty inputs, score output format, resume, and the
//! selfcheck negative control.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_seqlab")
}

fn seqlab(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn seqlab")
}

fn ok(args: &[&str]) -> String {
    let out = seqlab(args);
    assert!(
        out.status.success(),
        "seqlab {args:?} failed:\n{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn fails_mentioning(args: &[&str], needle: &str) {
    let out = seqlab(args);
    assert!(!out.status.success(), "seqlab {args:?} unexpectedly passed");
    let all = format!(
        "{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(
        all.contains(needle),
        "output of seqlab {args:?} does not mention '{needle}':\n{all}"
    );
}

/// Tiny dataset plus a config file pointing at it.
fn setup(dir: &Path, epochs: usize) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "synth",
        "--out-dir",
        data.to_str().unwrap(),
        "--train-utterances",
        "12",
        "--valid-utterances",
        "4",
        "--vocab-size",
        "3",
        "--feature-dim",
        "4",
        "--min-labels",
        "2",
        "--max-labels",
        "3",
        "--min-seg",
        "4",
        "--max-seg",
        "6",
        "--seed",
        "5",
    ]);
    let config = dir.join("exp.conf");
    fs::write(
        &config,
        format!(
            "[data]\n\
             train_features = {d}/train.feats\n\
             train_labels = {d}/train.labels\n\
             valid_features = {d}/valid.feats\n\
             valid_labels = {d}/valid.labels\n\
             vocab = {d}/vocab.txt\n\
             [encoder]\n\
             input_dim = 4\n\
             hidden_dim = 6\n\
             num_layers = 2\n\
             subsample = 2\n\
             [scrf]\n\
             embed_dim = 6\n\
             feature_dim = 8\n\
             max_seg_len = 4\n\
             [train]\n\
             epochs = {epochs}\n",
            d = data.display()
        ),
    )
    .unwrap();
    config
}

#[test]
fn missing_config_key_is_named() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("bad.conf");
    fs::write(&config, "[encoder]\ninput_dim = 4\n[train]\nepochs = 1\n").unwrap();
    fails_mentioning(
        &[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            dir.path().join("out").to_str().unwrap(),
        ],
        "data.vocab",
    );
}

#[test]
fn unknown_config_key_is_named() {
    let dir = TempDir::new().unwrap();
    let config = setup(dir.path(), 1);
    let mut text = fs::read_to_string(&config).unwrap();
    text.push_str("momentum = 0.9\n");
    fs::write(&config, text).unwrap();
    fails_mentioning(
        &[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            dir.path().join("out").to_str().unwrap(),
        ],
        "momentum",
    );
}

#[test]
fn zero_epoch_run_still_writes_artifacts() {
    let dir = TempDir::new().unwrap();
    let config = setup(dir.path(), 0);
    let out = dir.path().join("run");
    ok(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(out.join("epoch_000.ckpt").exists());
    assert!(out.join("final.ckpt").exists());
    let csv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1, "header only: {csv:?}");

    // the untrained checkpoint still decodes
    let hyp = dir.path().join("hyp.labels");
    ok(&[
        "decode",
        "--checkpoint",
        out.join("final.ckpt").to_str().unwrap(),
        "--features",
        dir.path().join("data/valid.feats").to_str().unwrap(),
        "--mode",
        "scrf",
        "--output",
        hyp.to_str().unwrap(),
    ]);
    assert_eq!(fs::read_to_string(&hyp).unwrap().lines().count(), 4);
}

#[test]
fn decoding_no_utterances_writes_empty_output() {
    let dir = TempDir::new().unwrap();
    let config = setup(dir.path(), 0);
    let out = dir.path().join("run");
    ok(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    let empty = dir.path().join("empty.feats");
    fs::write(&empty, "").unwrap();
    let hyp = dir.path().join("hyp.labels");
    ok(&[
        "decode",
        "--checkpoint",
        out.join("final.ckpt").to_str().unwrap(),
        "--features",
        empty.to_str().unwrap(),
        "--mode",
        "ctc",
        "--output",
        hyp.to_str().unwrap(),
    ]);
    assert_eq!(fs::read_to_string(&hyp).unwrap(), "");
}

#[test]
fn decode_rejects_wrong_feature_width() {
    let dir = TempDir::new().unwrap();
    let config = setup(dir.path(), 0);
    let out = dir.path().join("run");
    ok(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    let narrow = dir.path().join("narrow.feats");
    fs::write(&narrow, "wide0 2 3\n1 2 3\n1 2 3\n").unwrap();
    fails_mentioning(
        &[
            "decode",
            "--checkpoint",
            out.join("final.ckpt").to_str().unwrap(),
            "--features",
            narrow.to_str().unwrap(),
            "--mode",
            "scrf",
            "--output",
            dir.path().join("hyp.labels").to_str().unwrap(),
        ],
        "wide0",
    );
}

#[test]
fn score_reports_counts_totals_and_rate() {
    let dir = TempDir::new().unwrap();
    let refs = dir.path().join("ref.labels");
    let hyps = dir.path().join("hyp.labels");
    fs::write(&refs, "u0 a b c\nu1 a a\n").unwrap();
    // u0: one substitution; u1: one deletion
    fs::write(&hyps, "u0 a x c\nu1 a\n").unwrap();
    let stdout = ok(&["score", "--refs", refs.to_str().unwrap(), "--hyps", hyps.to_str().unwrap()]);
    assert!(stdout.contains("u0 S=1 I=0 D=0 ref=3"), "{stdout}");
    assert!(stdout.contains("u1 S=0 I=0 D=1 ref=2"), "{stdout}");
    assert!(stdout.contains("total S=1 I=0 D=1 ref=5"), "{stdout}");
    assert!(stdout.contains("PER 40.0"), "{stdout}");
}

#[test]
fn score_applies_symbol_mapping() {
    let dir = TempDir::new().unwrap();
    let refs = dir.path().join("ref.labels");
    let hyps = dir.path().join("hyp.labels");
    let map = dir.path().join("map.txt");
    fs::write(&refs, "u0 ax b\n").unwrap();
    fs::write(&hyps, "u0 ah b\n").unwrap();
    fs::write(&map, "ax a\nah a\nb b\n").unwrap();
    let stdout = ok(&[
        "score",
        "--refs",
        refs.to_str().unwrap(),
        "--hyps",
        hyps.to_str().unwrap(),
        "--mapping",
        map.to_str().unwrap(),
    ]);
    assert!(stdout.contains("PER 0.0"), "{stdout}");
}

#[test]
fn resuming_a_finished_run_changes_nothing() {
    let dir = TempDir::new().unwrap();
    let config = setup(dir.path(), 2);
    let out = dir.path().join("run");
    ok(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    let csv_before = fs::read(out.join("convergence.csv")).unwrap();
    let ckpt_before = fs::read(out.join("final.ckpt")).unwrap();
    ok(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out.to_str().unwrap(),
        "--resume",
        out.join("final.ckpt").to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(fs::read(out.join("convergence.csv")).unwrap(), csv_before);
    assert_eq!(fs::read(out.join("final.ckpt")).unwrap(), ckpt_before);
}

#[test]
fn synth_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        ok(&[
            "synth",
            "--out-dir",
            d.to_str().unwrap(),
            "--train-utterances",
            "6",
            "--valid-utterances",
            "3",
            "--seed",
            "9",
        ]);
    }
    for f in ["vocab.txt", "train.feats", "train.labels", "valid.feats", "valid.labels"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f} differs between identically seeded runs"
        );
    }
}

#[test]
fn selfcheck_detects_injected_corruption() {
    let out = seqlab(&["selfcheck", "--scale", "small", "--corrupt", "scrf-partition"]);
    assert!(!out.status.success(), "corrupted selfcheck must fail");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL"), "{stdout}");
}
