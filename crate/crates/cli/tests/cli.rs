use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bsdp(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bsdp"))
        .args(args)
        .current_dir(dir)
        .env_remove("OLOWOD_SEED")
        .output()
        .expect("binary runs")
}

const CONFIG: &str = r#"{
  "feature_dim": 6,
  "tasks": 2,
  "n_per_task": 3,
  "epochs_base": 2,
  "exemplars_per_class": 10,
  "dlp_frequency": 0.05,
  "flp_frequency": 0.2,
  "seed": 4,
  "geometry": {"train_per_class": 40, "test_per_class": 10, "separation": 2.0, "spread": 1.0}
}"#;

#[test]
fn gen_run_metrics_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("cfg.json"), CONFIG).unwrap();

    let out = bsdp(&["gen", "--config", "cfg.json", "--out", "data"], dir);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(dir.join("data/task_1_train.jsonl").exists());
    assert!(dir.join("data/task_2_train.jsonl").exists());
    assert!(dir.join("data/test.jsonl").exists());

    let out = bsdp(
        &[
            "run", "--config", "cfg.json", "--data", "data", "--out", "report",
        ],
        dir,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "summary.csv",
        "task_1.json",
        "task_2.json",
        "effective_config.json",
        "predictions.jsonl",
    ] {
        assert!(dir.join("report").join(f).exists(), "missing {f}");
    }
    let effective: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.join("report/effective_config.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(effective["gamma"], 0.5);
    assert_eq!(effective["seed"], 4);

    let out = bsdp(
        &[
            "run", "--config", "cfg.json", "--data", "data", "--out", "again",
        ],
        dir,
    );
    assert!(out.status.success());
    let first = fs::read(dir.join("report/summary.csv")).unwrap();
    assert_eq!(first, fs::read(dir.join("again/summary.csv")).unwrap());

    let out = bsdp(
        &[
            "metrics",
            "--config",
            "cfg.json",
            "--predictions",
            "report/predictions.jsonl",
            "--out",
            "recomputed",
        ],
        dir,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(first, fs::read(dir.join("recomputed/summary.csv")).unwrap());

    let out = bsdp(
        &[
            "select",
            "--stream",
            "data/task_1_train.jsonl",
            "--k",
            "5",
            "--out",
            "sel.json",
        ],
        dir,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let sel: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("sel.json")).unwrap()).unwrap();
    assert_eq!(sel.as_array().unwrap().len(), 3);
    assert_eq!(sel[0]["exemplars"].as_array().unwrap().len(), 5);
}

#[test]
fn seed_flag_beats_env_beats_config() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("cfg.json"), CONFIG).unwrap();
    let gen = |out: &str, extra: &[&str], env: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_bsdp"));
        cmd.args(["gen", "--config", "cfg.json", "--out", out])
            .args(extra)
            .current_dir(dir);
        match env {
            Some(v) => cmd.env("OLOWOD_SEED", v),
            None => cmd.env_remove("OLOWOD_SEED"),
        };
        assert!(cmd.output().unwrap().status.success());
        fs::read(dir.join(out).join("test.jsonl")).unwrap()
    };
    let config_seed = gen("a", &[], None);
    let env_seed = gen("b", &[], Some("9"));
    let flag_seed = gen("c", &["--seed", "9"], Some("1"));
    let flag_only = gen("d", &["--seed", "4"], Some("9"));
    assert_ne!(config_seed, env_seed);
    assert_eq!(env_seed, flag_seed);
    assert_eq!(config_seed, flag_only);
}

#[test]
fn fit_writes_ranked_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    // A deterministic bell-shaped sample, spread over two categories.
    let values: Vec<f64> = (1..=400)
        .map(|i| {
            let u = i as f64 / 401.0;
            (u / (1.0 - u)).ln()
        })
        .collect();
    let groups: Vec<Vec<Vec<f64>>> = values
        .chunks(40)
        .map(|g| g.chunks(2).map(|f| f.to_vec()).collect())
        .collect();
    let dump = serde_json::json!([
        {"category_id": 0, "groups": &groups[..5]},
        {"category_id": 1, "groups": &groups[5..]},
    ]);
    fs::write(dir.join("store.json"), dump.to_string()).unwrap();
    let out = bsdp(
        &[
            "fit",
            "--features",
            "store.json",
            "--bins",
            "20",
            "--out",
            "fit.json",
            "--group-size",
            "20",
        ],
        dir,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("fit.json")).unwrap()).unwrap();
    assert_eq!(report["sample_count"], 400);
    assert_eq!(report["results"].as_array().unwrap().len(), 10);
}

#[test]
fn bad_input_fails_with_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = bsdp(&["frobnicate"], dir);
    assert!(!out.status.success());

    let out = bsdp(
        &[
            "run",
            "--config",
            "missing.json",
            "--data",
            "d",
            "--out",
            "o",
        ],
        dir,
    );
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));

    fs::write(dir.join("cfg.json"), r#"{"feature_dim": 2, "gama": 1}"#).unwrap();
    let out = bsdp(&["gen", "--config", "cfg.json", "--out", "x"], dir);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("gama"));
}
