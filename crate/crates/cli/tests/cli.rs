//! End-to-end checks of the installed binary: exit codes, stdout contracts,
//! config file precedence, and the synth -> crossval -> evaluate pipeline.

use std::path::Path;
use std::process::{Command, Output};

fn segpool(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segpool"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary should launch")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn expect_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        stdout(out),
        stderr(out)
    );
}

fn synth_corpus(dir: &Path, speakers: &str) {
    let out = segpool(
        &[
            "synth",
            "--seed",
            "7",
            "--out",
            "corpus",
            "--speakers",
            speakers,
            "--utterances",
            "4",
        ],
        dir,
    );
    expect_ok(&out, "synth");
    assert!(stdout(&out).contains("manifest:"));
    assert!(dir.join("corpus/manifest.csv").is_file());
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let unknown_flag = segpool(&["crossval", "--bogus"], dir.path());
    assert_eq!(
        unknown_flag.status.code(),
        Some(2),
        "{}",
        stderr(&unknown_flag)
    );
    assert!(stderr(&unknown_flag).to_lowercase().contains("usage"));

    let unknown_subcommand = segpool(&["frobnicate"], dir.path());
    assert_eq!(unknown_subcommand.status.code(), Some(2));

    let missing_required = segpool(&["train", "--manifest", "m.csv", "--out", "o"], dir.path());
    assert_eq!(missing_required.status.code(), Some(2));
}

#[test]
fn gradcheck_reports_errors_and_gates_on_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let pass = segpool(&["gradcheck", "--seed", "3"], dir.path());
    expect_ok(&pass, "gradcheck");
    let text = stdout(&pass);
    assert!(text.contains("overall max rel error"), "{text}");
    assert!(text.contains("attention"), "{text}");

    let fail = segpool(
        &["gradcheck", "--seed", "3", "--tolerance", "1e-12"],
        dir.path(),
    );
    assert_eq!(fail.status.code(), Some(1));
    assert!(
        stderr(&fail).contains("exceeds tolerance"),
        "{}",
        stderr(&fail)
    );
}

#[test]
fn synth_crossval_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    synth_corpus(dir.path(), "3");

    let crossval = segpool(
        &[
            "crossval",
            "--manifest",
            "corpus/manifest.csv",
            "--pooling",
            "sr",
            "--vad",
            "truth",
            "--epochs",
            "2",
            "--batch-size",
            "8",
            "--lr",
            "1e-3",
            "--seed",
            "5",
            "--out",
            "runs",
        ],
        dir.path(),
    );
    expect_ok(&crossval, "crossval");
    assert!(stdout(&crossval).contains("aggregate written"));
    assert!(dir.path().join("runs/aggregate.json").is_file());
    assert!(dir.path().join("runs/confusion.csv").is_file());
    for speaker in ["spk00", "spk01", "spk02"] {
        let run = dir.path().join(format!("runs/run_{speaker}"));
        assert!(run.join("model.ckpt").is_file(), "{speaker} checkpoint");
        assert!(run.join("train_log.jsonl").is_file(), "{speaker} log");
        assert!(run.join("report.json").is_file(), "{speaker} report");
    }

    let evaluate = segpool(
        &[
            "evaluate",
            "--manifest",
            "corpus/manifest.csv",
            "--checkpoint",
            "runs/run_spk00/model.ckpt",
            "--speakers",
            "spk00",
            "--vad",
            "truth",
            "--out",
            "evalout",
        ],
        dir.path(),
    );
    expect_ok(&evaluate, "evaluate");
    let text = stdout(&evaluate);
    assert!(text.contains("UA "), "{text}");
    assert!(text.contains("confusion"), "{text}");
    for name in ["report.json", "confusion.csv", "confusion.svg"] {
        assert!(dir.path().join("evalout").join(name).is_file(), "{name}");
    }
}

#[test]
fn vad_stdout_matches_saved_mask() {
    let dir = tempfile::tempdir().unwrap();
    synth_corpus(dir.path(), "1");
    let wav = "corpus/wav/spk00_u000.wav";

    let saved = segpool(&["vad", wav, "--out", "mask.txt"], dir.path());
    expect_ok(&saved, "vad --out");
    assert!(stdout(&saved).contains("mask written"));

    let printed = segpool(&["vad", wav], dir.path());
    expect_ok(&printed, "vad");
    let from_stdout = stdout(&printed).trim().to_string();
    let from_file = std::fs::read_to_string(dir.path().join("mask.txt"))
        .unwrap()
        .trim()
        .to_string();
    assert_eq!(from_stdout, from_file);
    assert!(!from_stdout.is_empty());
    assert!(from_stdout
        .split_whitespace()
        .all(|tok| tok == "0" || tok == "1"));
}

#[test]
fn extract_writes_a_loadable_feature_file() {
    let dir = tempfile::tempdir().unwrap();
    synth_corpus(dir.path(), "1");

    let out = segpool(
        &[
            "extract",
            "corpus/wav/spk00_u001.wav",
            "--out",
            "feats.bin",
            "--n-mels",
            "24",
        ],
        dir.path(),
    );
    expect_ok(&out, "extract");
    assert!(stdout(&out).contains("x 24 mels"), "{}", stdout(&out));

    let feats = segpool::features::load_features(dir.path().join("feats.bin")).unwrap();
    assert_eq!(feats.data.cols(), 24);
    assert!(feats.data.rows() > 0);
}

#[test]
fn config_file_applies_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    synth_corpus(dir.path(), "2");
    std::fs::write(
        dir.path().join("run.conf"),
        "pooling = sap\nepochs = 2\nbatch_size = 8\nbase_lr = 0.001\nvad = truth\n",
    )
    .unwrap();

    let from_file = segpool(
        &[
            "train",
            "--manifest",
            "corpus/manifest.csv",
            "--out",
            "t1",
            "--val-speakers",
            "spk01",
            "--config",
            "run.conf",
        ],
        dir.path(),
    );
    expect_ok(&from_file, "train with config file");
    let echo = std::fs::read_to_string(dir.path().join("t1/train_log.jsonl")).unwrap();
    let first = echo.lines().next().unwrap();
    assert!(first.contains("\"sap_only\""), "{first}");
    assert!(first.contains("\"epochs\":2"), "{first}");

    let overridden = segpool(
        &[
            "train",
            "--manifest",
            "corpus/manifest.csv",
            "--out",
            "t2",
            "--val-speakers",
            "spk01",
            "--config",
            "run.conf",
            "--pooling",
            "gap",
        ],
        dir.path(),
    );
    expect_ok(&overridden, "train with flag override");
    let echo = std::fs::read_to_string(dir.path().join("t2/train_log.jsonl")).unwrap();
    assert!(echo.lines().next().unwrap().contains("\"gap_only\""));

    std::fs::write(dir.path().join("bad.conf"), "typo_key = 1\n").unwrap();
    let rejected = segpool(
        &[
            "train",
            "--manifest",
            "corpus/manifest.csv",
            "--out",
            "t3",
            "--val-speakers",
            "spk01",
            "--config",
            "bad.conf",
        ],
        dir.path(),
    );
    assert_eq!(rejected.status.code(), Some(1));
    assert!(
        stderr(&rejected).contains("unknown keys"),
        "{}",
        stderr(&rejected)
    );
}
