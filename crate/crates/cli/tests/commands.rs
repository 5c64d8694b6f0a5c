use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn oadg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oadg")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) {
    let out = oadg(&["synth", "--out", s(dir), "--train", "4", "--test", "3", "--seed", "7"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_is_reproducible() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    synth(a.path());
    synth(b.path());
    let read = |d: &Path| std::fs::read(d.join("train/annotations.json")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert!(a.path().join("test/annotations.json").is_file());
}

#[test]
fn augment_saliency_and_corrupt_write_outputs() {
    let dir = TempDir::new().unwrap();
    synth(dir.path());
    let train = dir.path().join("train");

    let aug = dir.path().join("aug");
    let out = oadg(&["augment", "--dataset", s(&train), "--out", s(&aug), "--samples-per-image", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let plans = std::fs::read_to_string(aug.join("mixplan.jsonl")).unwrap();
    assert_eq!(plans.lines().count(), 8);

    let sal = dir.path().join("sal");
    assert_eq!(code(&oadg(&["saliency", "--dataset", s(&train), "--out", s(&sal)])), 0);
    assert_eq!(std::fs::read_to_string(sal.join("scores.jsonl")).unwrap().lines().count(), 4);

    let cor = dir.path().join("cor");
    let out = oadg(&["corrupt", "--dataset", s(&train), "--out", s(&cor), "--kinds", "contrast,jpeg", "--severities", "1,3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for kind in ["contrast", "jpeg"] {
        for sev in ["1", "3"] {
            assert!(cor.join(kind).join(sev).join("annotations.json").is_file());
        }
    }
}

#[test]
fn train_eval_and_featcorr_round_trip() {
    let dir = TempDir::new().unwrap();
    synth(dir.path());
    let (train, test) = (dir.path().join("train"), dir.path().join("test"));
    let params = dir.path().join("params.json");
    let log = dir.path().join("log.csv");
    let out = oadg(&[
        "train", "--mode", "oadg", "--dataset", s(&train), "--heldout", s(&test), "--epochs", "2",
        "--out", s(&params), "--log", s(&log), "--jobs", "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let log_text = std::fs::read_to_string(&log).unwrap();
    assert!(log_text.starts_with("epoch,L_det,L_cs,L_ct,total,clean_mAP"));
    assert_eq!(log_text.lines().count(), 3);

    let cor = dir.path().join("cor");
    let out = oadg(&["corrupt", "--dataset", s(&test), "--out", s(&cor), "--kinds", "brightness", "--severities", "1..2"]);
    assert_eq!(code(&out), 0);
    let report = dir.path().join("report.json");
    let out = oadg(&["eval", "--params", s(&params), "--clean", s(&test), "--corrupted", s(&cor), "--out", s(&report)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["p"].as_array().unwrap().len(), 1);
    assert!(report.with_extension("csv").is_file());

    let csv = dir.path().join("fc.csv");
    let out = oadg(&[
        "featcorr", "--params", s(&params), "--clean", s(&test), "--corrupted", s(&cor.join("brightness/2")),
        "--out", s(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(&csv).unwrap().contains("background"));
}

#[test]
fn gradcheck_passes() {
    let out = oadg(&["gradcheck", "--seed", "3", "--trials", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(r["pass"], true);
}

#[test]
fn config_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"hyper":{"tau":-1.0}}"#).unwrap();
    assert_eq!(code(&oadg(&["repro", "--config", s(&cfg), "--out", s(dir.path())])), 2);
    assert!(!dir.path().join("repro").exists(), "invalid config must not write outputs");

    std::fs::write(&cfg, r#"{"no_such_key":1}"#).unwrap();
    assert_eq!(code(&oadg(&["synth", "--config", s(&cfg), "--out", s(dir.path())])), 2);

    assert_eq!(code(&oadg(&["train", "--mode", "fancy"])), 2);
    assert_eq!(code(&oadg(&["gradcheck", "--jobs", "0"])), 2);
    let out = oadg(&["corrupt", "--dataset", s(dir.path()), "--out", s(dir.path()), "--kinds", "snow"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_inputs_exit_4() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope");
    assert_eq!(code(&oadg(&["saliency", "--dataset", s(&missing), "--out", s(dir.path())])), 4);
    let out = oadg(&["eval", "--params", s(&missing), "--clean", s(&missing), "--corrupted", s(&missing)]);
    assert_eq!(code(&out), 4);
    assert_eq!(code(&oadg(&["synth", "--config", s(&missing), "--out", s(dir.path())])), 4);
}
