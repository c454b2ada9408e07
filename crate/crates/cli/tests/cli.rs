use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn acdgcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_acdgcl"))
        .args(args)
        .env("ACDGCL_DATA_DIR", data_root())
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn quick_config(dir: &Path) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(
        &path,
        r#"{"epochs": 2, "batch_size": 64, "model": {"num_layers": 2, "hidden_dim": 8, "embed_dim": 8},
            "probe": {"epochs": 50}, "eval": {"folds": 3, "seeds": [0]}}"#,
    )
    .unwrap();
    path
}

#[test]
fn train_then_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path());
    let out = tmp.path().join("run");
    let o = acdgcl(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("epoch,l_inv,l_recon,l_adv,total,seconds\n"));
    assert_eq!(csv.lines().count(), 3);
    let ckpt: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("checkpoint.json")).unwrap()).unwrap();
    assert_eq!(ckpt["train_config"]["seed"], 3);

    let report = tmp.path().join("eval/folds.csv");
    let o = acdgcl(&[
        "eval",
        "--checkpoint",
        out.join("checkpoint.json").to_str().unwrap(),
        "--folds",
        "3",
        "--seeds",
        "2",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("accuracy "));
    assert_eq!(fs::read_to_string(&report).unwrap().lines().count(), 1 + 3 * 2);
    assert!(report.with_extension("json").exists());
}

#[test]
fn data_flag_accepts_dataset_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path());
    let dir = data_root().join("MUTAG");
    let o = acdgcl(&[
        "train",
        "--data",
        dir.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("r").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"epochs": 1, "learning_rat": 0.1}"#).unwrap();
    let o = acdgcl(&["train", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("r").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rat"));
}

#[test]
fn unknown_sweep_axis_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let o = acdgcl(&["sweep", "--axis", "dropout", "--values", "0.1", "--out", tmp.path().join("s.csv").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("dropout"));
}

#[test]
fn single_value_sweep_writes_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path());
    let out = tmp.path().join("sweep.csv");
    let o = acdgcl(&[
        "sweep",
        "--axis",
        "epsilon",
        "--values",
        "0.02",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("axis,value,mean,std\nepsilon,0.02,"));
}

#[test]
fn ablate_writes_every_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = quick_config(tmp.path());
    let out = tmp.path().join("abl");
    let o = acdgcl(&["ablate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    let no_adv = fs::read_to_string(out.join("without_adv/metrics_seed0.csv")).unwrap();
    for line in no_adv.lines().skip(1) {
        assert_eq!(line.split(',').nth(3), Some("0"));
    }
}

#[test]
fn gradcheck_passes() {
    let o = acdgcl(&["gradcheck", "--samples", "30"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert_eq!(stdout(&o).lines().filter(|l| l.contains(" PASS ")).count(), 4);
}
