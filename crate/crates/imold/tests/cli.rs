//! The `imold` binary end to end: exit codes and file outputs.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn imold(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imold"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

/// The shipped full-model config, shrunk and pointed at `data.jsonl`.
fn small_config(lr: f64) -> String {
    let base = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/imold.json");
    let mut cfg: serde_json::Value = serde_json::from_str(&fs::read_to_string(base).unwrap()).unwrap();
    let over = serde_json::json!({
        "hidden_dim": 8, "num_layers": 2, "codebook_size": 8, "batch_size": 16,
        "max_epochs": 2, "seeds": [0], "lr": lr, "dataset": "data.jsonl"
    });
    for (k, v) in over.as_object().unwrap() {
        cfg[k] = v.clone();
    }
    cfg.to_string()
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = imold(&["gradcheck", "--full"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() > 10);
    assert!(!text.contains("FAIL"));
}

#[test]
fn gen_data_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "spec.json", r#"{"n_train":40,"n_val":10,"n_test":10,"seed":5}"#);
    for name in ["a.jsonl", "b/c.jsonl"] {
        let out = imold(&["gen-data", "--spec", "spec.json", "--out", name], dir.path());
        assert_eq!(out.status.code(), Some(0));
    }
    let a = fs::read(dir.path().join("a.jsonl")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/c.jsonl")).unwrap());
    assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 60);
}

#[test]
fn train_eval_export_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "spec.json", r#"{"n_train":32,"n_val":16,"n_test":16,"seed":1}"#);
    assert_eq!(imold(&["gen-data", "--spec", "spec.json", "--out", "data.jsonl"], d).status.code(), Some(0));
    write(d, "run.json", &small_config(0.001));
    let out = imold(&["train", "--config", "run.json", "--out", "run"], d);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("run/result.json").exists());

    let ck = "run/checkpoints/seed-0.json";
    let out = imold(&["eval", "--checkpoint", ck, "--data", "data.jsonl", "--split", "test"], d);
    assert_eq!(out.status.code(), Some(0));
    let reports: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(reports[0]["metric"], "accuracy");
    assert_eq!(reports[0]["n_samples"], 16);

    let out = imold(&["export", "--checkpoint", ck, "--data", "data.jsonl", "--out", "emb.jsonl"], d);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read_to_string(d.join("emb.jsonl")).unwrap().lines().count(), 64);

    // corrupted checkpoint
    write(d, "bad.json", "{\"format\": \"imold-checkpoint\", \"vers");
    let out = imold(&["eval", "--checkpoint", "bad.json", "--data", "data.jsonl", "--split", "val"], d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));

    // unknown split and missing arguments are usage errors
    assert_eq!(imold(&["eval", "--checkpoint", ck, "--data", "data.jsonl", "--split", "dev"], d).status.code(), Some(1));
    assert_eq!(imold(&["train"], d).status.code(), Some(1));

    // invalid dataset line
    write(d, "broken.jsonl", "{\"id\":\"g\",\"num_nodes\":2,\"node_types\":[0,0],\"edges\":[[0,5]],\"label\":1,\"split\":\"train\"}\n");
    let out = imold(&["train", "--config", "run.json", "--data", "broken.jsonl", "--out", "x"], d);
    assert_eq!(out.status.code(), Some(1));

    // a diverging learning rate is a numeric failure
    write(d, "hot.json", &small_config(1e300));
    let out = imold(&["train", "--config", "hot.json", "--out", "hot"], d);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
