//! End-to-end tests driving the `dmf` binary: generate a tiny dataset,
//! train, evaluate the checkpoint, and run self-verification.

use std::process::Command;

fn dmf() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dmf"))
}

fn json_stdout(out: std::process::Output) -> serde_json::Value {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout should be a single JSON report")
}

#[test]
fn gen_train_eval_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let model = dir.path().join("model.dmf");

    let gen = json_stdout(
        dmf()
            .args(["gen", "--out"])
            .arg(&data)
            .args([
                "--users", "30", "--items", "100", "--multimodal-dim", "8",
                "--train-examples", "500", "--test-examples", "200", "--seed", "3",
            ])
            .output()
            .unwrap(),
    );
    assert_eq!(gen["train_examples"].as_u64(), Some(500));
    assert!(data.join("train.jsonl").exists());
    assert!(data.join("items.mmf").exists());

    let train = json_stdout(
        dmf()
            .args(["train", "--data"])
            .arg(&data)
            .args(["--out"])
            .arg(&model)
            .args(["--preset", "desk", "--strategy", "dmf", "--alpha", "0.3", "--epochs", "1"])
            .output()
            .unwrap(),
    );
    let train_auc = train["test_auc"].as_f64().unwrap();
    assert!(train_auc > 0.0 && train_auc < 1.0);
    assert!(model.exists());
    assert!(data.join("bucketizer.json").exists());

    let eval = json_stdout(
        dmf()
            .args(["eval", "--data"])
            .arg(&data)
            .args(["--model"])
            .arg(&model)
            .args(["--bucketizer"])
            .arg(data.join("bucketizer.json"))
            .output()
            .unwrap(),
    );
    // eval must reproduce the AUC the trainer reported on the same split
    let eval_auc = eval["auc"].as_f64().unwrap();
    assert!((eval_auc - train_auc).abs() < 1e-12, "eval {} != train {}", eval_auc, train_auc);
    assert_eq!(eval["strategy"].as_str(), Some("dmf"));
}

#[test]
fn verify_passes_and_fault_injection_fails() {
    let ok = dmf().arg("verify").output().unwrap();
    assert!(
        ok.status.success(),
        "verify failed:\n{}",
        String::from_utf8_lossy(&ok.stdout)
    );
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("PASS"), "verify printed no PASS lines:\n{}", stdout);

    let bad = dmf().args(["verify", "--inject-fault"]).output().unwrap();
    assert!(!bad.status.success(), "fault injection should make verify exit nonzero");
}

#[test]
fn gen_rejects_unknown_config_keys() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "user_count = 10\nnot_a_real_key = 1\n").unwrap();
    let out = dmf()
        .args(["gen", "--out"])
        .arg(dir.path().join("data"))
        .args(["--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success(), "unknown config key should be rejected");
}
