//! End-to-end smoke tests of the command-line surface.

use std::path::Path;
use std::process::Command;

fn ccil() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ccil"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn write_small_spec(path: &Path) {
    std::fs::write(
        path,
        r#"{ "samples_per_class_per_domain": 6 }"#,
    )
    .unwrap();
}

#[test]
fn synth_train_eval_export_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let spec = tmp.path().join("spec.json");
    write_small_spec(&spec);

    let out = run_ok(ccil()
        .arg("synth")
        .arg("--spec")
        .arg(&spec)
        .arg("--out")
        .arg(&data)
        .arg("--seed")
        .arg("3"));
    assert!(out.contains("synth dataset"), "{out}");

    let exp = tmp.path().join("exp");
    let config = tmp.path().join("config.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "dataset": data,
            "protocol": "cross_person",
            "fold": 0,
            "model_preset": "synth",
            "train": {
                "alpha": 1.0,
                "lambda": 0.9,
                "regularizer": "concept_matrix",
                "lr": 1e-3,
                "batch_size": 16,
                "max_epochs": 3,
                "batch_mode": "uniform"
            },
            "trials": 1,
            "output": exp
        })
        .to_string(),
    )
    .unwrap();

    let out = run_ok(ccil().arg("train").arg("--config").arg(&config));
    assert!(out.contains("ccil:"), "{out}");
    let ckpt = exp.join("fold0/trial0/best.ckpt");
    assert!(ckpt.exists());
    assert!(exp.join("results.csv").exists());

    let out = run_ok(ccil()
        .arg("eval")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--data")
        .arg(&data)
        .arg("--protocol")
        .arg("cross_person")
        .arg("--fold")
        .arg("0")
        .arg("--seed")
        .arg("0")
        .arg("--split")
        .arg("target"));
    assert!(out.contains("target accuracy"), "{out}");

    let features = tmp.path().join("features.csv");
    run_ok(ccil()
        .arg("export-features")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--data")
        .arg(&data)
        .arg("--out")
        .arg(&features)
        .arg("--protocol")
        .arg("cross_person")
        .arg("--fold")
        .arg("0"));
    let text = std::fs::read_to_string(&features).unwrap();
    assert!(text.starts_with("sample_id,domain,class,z_1"));
}

#[test]
fn gradcheck_exits_zero() {
    let out = run_ok(ccil()
        .arg("gradcheck")
        .arg("--points")
        .arg("2")
        .arg("--composed-points")
        .arg("1"));
    assert!(out.contains("PASS conv2d"), "{out}");
    assert!(!out.contains("FAIL"), "{out}");
}

#[test]
fn synth_prints_default_spec() {
    let out = run_ok(ccil().arg("synth").arg("--print-default-spec").arg("--out").arg("unused"));
    assert!(out.contains("\"num_domains\": 4"), "{out}");
    assert!(out.contains("\"num_classes\": 6"), "{out}");
}

#[test]
fn unknown_dataset_fails_with_message() {
    let out = ccil()
        .arg("ingest")
        .arg("nope")
        .arg("--raw")
        .arg("/nonexistent")
        .arg("--out")
        .arg("/tmp/unused")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown dataset"));
}
