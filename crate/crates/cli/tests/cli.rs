use std::path::Path;
use std::process::{Command, Output};

fn zonalnet(args: &[&str], dir: &Path) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_zonalnet"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run zonalnet");
    assert!(
        out.status.success(),
        "zonalnet {args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

const CONFIG: &str = r#"
profile = "desk"
epochs = 1
dataset = "data"

[model]
width_multiplier = 0.125
input_size = 64
"#;

#[test]
fn phantoms_train_eval_predict_stats() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    zonalnet(&["phantoms", "--out", "data", "--count", "3", "--seed", "5", "--slices", "6", "--size", "64", "--reader2"], dir);
    assert!(dir.join("data/case002_mask_reader2.json").exists());
    std::fs::write(dir.join("train.toml"), CONFIG).unwrap();

    zonalnet(&["train", "--config", "train.toml", "--out", "run"], dir);
    for file in ["run/final.json", "run/final.bin", "run/best.json", "run/history.csv"] {
        assert!(dir.join(file).exists(), "{file} missing");
    }

    let out = zonalnet(&["eval", "--ckpt", "run/final", "--data", "data", "--reader2", "data", "--report", "model.json"], dir);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("row,zone,all_slices"));
    for file in ["model.json", "model_inter_reader.json", "model_comparisons.json"] {
        assert!(dir.join(file).exists(), "{file} missing");
    }
    zonalnet(&["eval", "--ckpt", "run/final", "--data", "data", "--report", "model.csv"], dir);
    let csv = std::fs::read_to_string(dir.join("model.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3 + 3 * 2);

    let out = zonalnet(&["stats", "--report", "model.json", "--report", "model_inter_reader.json", "--test", "signedrank"], dir);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("zone,subset,n,statistic,p_value,method"));
    assert_eq!(text.lines().count(), 11);
    zonalnet(&["stats", "--report", "model.json", "--report", "model_inter_reader.json", "--test", "ranksum"], dir);

    zonalnet(&["predict", "--ckpt", "run/final", "--in", "data/case000_img", "--out", "p1"], dir);
    zonalnet(&["predict", "--ckpt", "run/final", "--in", "data/case000_img", "--out", "p2"], dir);
    assert_eq!(std::fs::read(dir.join("p1.raw")).unwrap(), std::fs::read(dir.join("p2.raw")).unwrap());

    zonalnet(&["train", "--config", "train.toml", "--out", "resumed", "--resume", "run/final"], dir);
    assert!(dir.join("resumed/final.json").exists());
}

#[test]
fn bad_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_zonalnet"))
        .args(["eval", "--ckpt", "missing", "--data", ".", "--report", "r.json"])
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}
