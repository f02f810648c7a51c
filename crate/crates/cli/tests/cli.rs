use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn leadtime(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leadtime"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn synth_evaluate_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("spec.json"), r#"{"n_dialogues": 3, "duration": 60.0, "chunks_per_turn": [1, 1]}"#).unwrap();
    let out = leadtime(&["synth", "--spec", "spec.json", "--out", "corpus", "--seed", "4", "--splits", "1,1,1"], root);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("wrote 3 dialogues"));
    assert!(root.join("corpus/splits.json").is_file());

    fs::write(
        root.join("exp.json"),
        r#"{"corpus_dir": "corpus", "output_dir": "out", "seed": 2, "splits": "corpus/splits.json",
            "model": {"features": "R"}}"#,
    )
    .unwrap();
    let out = leadtime(&["evaluate", "--config", "exp.json", "--oracle", "--split", "test"], root);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("MMAE 0.0000"), "{}", stdout(&out));
    assert!(root.join("out/test_oracle.json").is_file());

    let out = leadtime(&["evaluate", "--config", "exp.json", "--silence-baseline", "--split", "val"], root);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("Endpoints rule"), "{}", stdout(&out));

    let out = leadtime(&["curves", "out/test_oracle.csv"], root);
    assert!(out.status.success(), "{}", stderr(&out));
    let table = fs::read_to_string(root.join("out/test_oracle.curves.csv")).unwrap();
    assert!(table.starts_with("bucket_value,mae_true,mae_pred,mean_pred_at_true\n"));
}

#[test]
fn evaluate_needs_exactly_one_predictor() {
    let dir = tempfile::tempdir().unwrap();
    let none = leadtime(&["evaluate", "--config", "x.json"], dir.path());
    assert!(!none.status.success());
    let both = leadtime(&["evaluate", "--config", "x.json", "--oracle", "--silence-baseline"], dir.path());
    assert!(!both.status.success());
}

#[test]
fn bad_split_name_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = leadtime(&["evaluate", "--config", "x.json", "--oracle", "--split", "dev"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).contains("dev"), "{}", stderr(&out));
}

#[test]
fn missing_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = leadtime(&["train", "--config", "missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("missing.json"), "{}", stderr(&out));
}
