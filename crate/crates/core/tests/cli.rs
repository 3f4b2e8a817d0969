//! Drives the binary through every subcommand on a tiny configuration.

use std::path::Path;
use std::process::Command;

fn run(dir: &Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_metricunet"))
        .args(args)
        .arg("--out-dir")
        .arg(dir.join("run"))
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "{args:?}: {}{}", stdout, String::from_utf8_lossy(&out.stderr));
    stdout
}

const TINY: &str = r#"{
  "dataset": {"num_cases": 6, "split": [0.5, 0.17, 0.33]},
  "network": {"encoder_channels": [2, 4, 8, 16], "decoder_channels": [8, 4, 2], "head_channels": 2},
  "train": {"max_iters": 4, "batch_size": 2, "patches_per_image": 4, "val_interval": 2},
  "stage1": {"detector": {"in_channels": 5, "encoder_channels": [2, 4, 8, 16], "decoder_channels": [8, 4, 2], "head_channels": 2},
             "train": {"max_iters": 3, "batch_size": 2, "patches_per_image": 4}}
}"#;

#[test]
fn all_subcommands_in_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    std::fs::write(&cfg, TINY).unwrap();
    let cfg = cfg.to_str().unwrap();

    assert!(run(dir.path(), &["gen-data", "--config", cfg, "--seed", "4", "--deterministic"]).contains("manifest"));
    // later commands pick up the config saved in the output directory
    assert!(run(dir.path(), &["train-stage1"]).contains("containment"));
    assert!(run(dir.path(), &["train-stage2"]).contains("model"));
    assert!(run(dir.path(), &["eval"]).contains("mean DSC"));
    let input = dir.path().join("run/data/case000.vol.vvol");
    let output = dir.path().join("pred.vvol");
    run(dir.path(), &["infer", "--input", input.to_str().unwrap(), "--output", output.to_str().unwrap()]);
    assert!(output.exists());
    assert!(run(dir.path(), &["report"]).contains("report.md"));
    run(dir.path(), &["sweep", "--param", "k", "--param", "sigma"]);
    let sweep = std::fs::read_to_string(dir.path().join("run/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + 4 + 5);

    let saved: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("run/config.json")).unwrap()).unwrap();
    assert_eq!(saved["dataset"]["seed"], 4);
    assert_eq!(saved["dataset"]["num_cases"], 6);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["sweep", "--param", "gamma"],
        vec!["--profile", "huge", "gen-data"],
        vec!["eval"],
    ] {
        let out = Command::new(env!("CARGO_BIN_EXE_metricunet"))
            .args(&args)
            .arg("--out-dir")
            .arg(dir.path().join("run"))
            .output()
            .unwrap();
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}
