//! End-to-end command-line contract tests: exit codes, run artifacts,
//! manifest-driven reproduction.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_opto-dfa"))
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

#[test]
fn unknown_mode_exits_2_and_lists_modes() {
    let out = bin()
        .args(["train", "--task", "mnist", "--mode", "sgd"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    for m in ["bp", "dfa", "dfa-ternary", "dfa-optical", "shallow"] {
        assert!(stderr.contains(m), "stderr missing {m}: {stderr}");
    }
}

#[test]
fn unknown_flag_exits_2() {
    let out = bin().args(["train", "--frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_weights_path_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args([
            "embed",
            "--task",
            "cora",
            "--weights",
            "/nonexistent/weights.odfa",
        ])
        .args(["--data-dir".as_ref(), data_dir().as_os_str()])
        .args(["--out-dir".as_ref(), tmp.path().as_os_str()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_dataset_prints_retrieval_instructions() {
    let tmp = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["train", "--task", "mnist", "--mode", "bp", "--epochs", "1"])
        .args(["--data-dir".as_ref(), tmp.path().as_os_str()])
        .args(["--out-dir".as_ref(), tmp.path().join("runs").as_os_str()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("train-images-idx3-ubyte") && stderr.contains("never downloads"),
        "{stderr}"
    );
}

#[test]
fn check_command_passes_and_sign_flip_fails_loudly() {
    let out = bin().args(["check", "--size", "8x4"]).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    for name in [
        "gradient-finite-differences",
        "decomposition-identity",
        "slice-consistency",
        "seed-determinism",
    ] {
        assert!(stdout.contains(&format!("PASS {name}")), "{stdout}");
    }

    let out = bin()
        .args(["check", "--size", "8x4", "--inject-sign-flip"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        stdout.contains("FAIL gradient-finite-differences"),
        "{stdout}"
    );
}

#[test]
fn train_writes_manifest_reports_weights_and_rerun_is_bit_identical() {
    if !data_dir().join("cora").exists() {
        eprintln!("dataset not present; skipping");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");

    // 64-bit tiny run.
    let out = bin()
        .args([
            "train", "--task", "cora", "--mode", "dfa-optical", "--epochs", "3", "--precision",
            "f64",
        ])
        .args(["--data-dir".as_ref(), data_dir().as_os_str()])
        .args(["--out-dir".as_ref(), runs.as_os_str()])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let run_dir = std::fs::read_dir(&runs)
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let manifest = run_dir.join("manifest.txt");
    let weights = run_dir.join("weights.odfa");
    let epochs = run_dir.join("epochs.jsonl");
    assert!(manifest.exists() && weights.exists() && epochs.exists());

    let manifest_text = std::fs::read_to_string(&manifest).unwrap();
    assert!(manifest_text.contains("format = odfa-manifest/1"));
    assert!(manifest_text.contains("precision = f64"));
    assert!(manifest_text.contains("data.cora/cora.content.sha256"));

    let lines: Vec<String> = std::fs::read_to_string(&epochs)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), 3);
    let parsed: serde_json::Value = serde_json::from_str(&lines[2]).unwrap();
    assert_eq!(parsed["epoch"], 2);
    assert!(parsed["test_acc"].as_f64().unwrap() > 0.0);

    // Re-run from the manifest: bit-identical weights.
    let runs2 = tmp.path().join("runs2");
    let out = bin()
        .args(["train"])
        .args(["--config".as_ref(), manifest.as_os_str()])
        .args(["--data-dir".as_ref(), data_dir().as_os_str()])
        .args(["--out-dir".as_ref(), runs2.as_os_str()])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run_dir2 = std::fs::read_dir(&runs2)
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let a = std::fs::read(&weights).unwrap();
    let b = std::fs::read(run_dir2.join("weights.odfa")).unwrap();
    assert_eq!(a, b, "manifest replay must reproduce weights bit-for-bit");
}

#[test]
fn embed_runs_on_trained_weights() {
    if !data_dir().join("cora").exists() {
        eprintln!("dataset not present; skipping");
        return;
    }
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().join("runs");
    let out = bin()
        .args(["train", "--task", "cora", "--mode", "bp", "--epochs", "2"])
        .args(["--data-dir".as_ref(), data_dir().as_os_str()])
        .args(["--out-dir".as_ref(), runs.as_os_str()])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let run_dir = std::fs::read_dir(&runs)
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();

    let embed_dir = tmp.path().join("embed");
    let out = bin()
        .args(["embed", "--task", "cora", "--layer", "0"])
        .args(["--iterations", "40", "--perplexity", "10"])
        .args(["--weights".as_ref(), run_dir.join("weights.odfa").as_os_str()])
        .args(["--data-dir".as_ref(), data_dir().as_os_str()])
        .args(["--out-dir".as_ref(), embed_dir.as_os_str()])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(embed_dir.join("embedding.csv")).unwrap();
    assert_eq!(text.lines().count(), 2709, "header + one row per node");
    assert_eq!(text.lines().next().unwrap(), "x,y,label");
    let kl: Vec<f64> = std::fs::read_to_string(embed_dir.join("kl_trace.txt"))
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(kl.len(), 40);
}
