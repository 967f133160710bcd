mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::temp_dir;
use metaconf::runner::{RunManifest, RunReport};
use serde_json::Value;

const SMALL: &str = "\
[benchmark]
n_train = 800
n_test = 300
target_correct_rate = 0.9

[model]
hidden_dims = [8, 8]

[train]
alpha = 0.1
beta = 0.05
epochs = 5
iterations_per_epoch = 20
batch_size = 16
n_clusters = 3

[gradcheck]
cases = 4
";

fn metaconf(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metaconf"))
        .args(args)
        .current_dir(dir)
        .env_remove(metaconf::runner::OUT_ROOT_ENV)
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Temp dir holding `small.toml` (plus any extra TOML appended) and `data.csv`.
fn workspace(tag: &str, extra: &str) -> PathBuf {
    let dir = temp_dir(tag);
    std::fs::write(dir.join("small.toml"), format!("{SMALL}{extra}")).unwrap();
    ok(&metaconf(&["--config", "small.toml", "datagen", "--out", "data.csv"], &dir));
    dir
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn datagen_defaults_and_repeatability() {
    let dir = temp_dir("cli-datagen");
    ok(&metaconf(&["datagen", "--out", "a.csv"], &dir));
    ok(&metaconf(&["datagen", "--out", "b.csv"], &dir));
    let a = std::fs::read_to_string(dir.join("a.csv")).unwrap();
    assert_eq!(a.lines().count(), 10_001);
    assert_eq!(std::fs::read_to_string(dir.join("a.test.csv")).unwrap().lines().count(), 2_001);
    assert_eq!(a, std::fs::read_to_string(dir.join("b.csv")).unwrap());
    assert_eq!(
        std::fs::read(dir.join("a.test.csv")).unwrap(),
        std::fs::read(dir.join("b.test.csv")).unwrap()
    );
    let meta = read_json(&dir.join("a.meta.json"));
    let rate = meta["realized_train_correct_rate"].as_f64().unwrap();
    assert!((rate - 0.99).abs() <= 0.01, "{rate}");
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn datagen_infeasible_target_exits_1() {
    let dir = temp_dir("cli-infeasible");
    std::fs::write(
        dir.join("bad.toml"),
        "[benchmark]\ntarget_correct_rate = 0.999999\nnoise_range = [1.0, 1.0001]\n",
    )
    .unwrap();
    let out = metaconf(&["--config", "bad.toml", "datagen", "--out", "x.csv"], &dir);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));
    assert!(!dir.join("x.csv").exists());
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn train_writes_alternating_history_and_complete_manifest() {
    let dir = workspace("cli-train", "");
    ok(&metaconf(&["--config", "small.toml", "train", "--data", "data.csv", "--out", "run"], &dir));
    let run = dir.join("run");
    let history = std::fs::read_to_string(run.join("history.jsonl")).unwrap();
    let kinds: Vec<String> = history
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["kind"].as_str().unwrap().to_owned())
        .collect();
    assert_eq!(kinds.len(), 100);
    for (i, k) in kinds.iter().enumerate() {
        assert_eq!(k, if i % 2 == 0 { "label" } else { "input" }, "record {}", i + 1);
    }

    let manifest: RunManifest = serde_json::from_value(read_json(&run.join("manifest.json"))).unwrap();
    assert_eq!(manifest.dataset_sha256.len(), 64);
    assert!(manifest.eval_dataset.ends_with("data.test.csv"));
    assert!(manifest.started_at.is_some() && manifest.finished_at.is_some());
    assert_eq!(manifest.config.train.epochs, 5);
    for a in &manifest.artifacts {
        assert!(run.join(a).exists(), "{a}");
    }
    let report: RunReport = serde_json::from_value(read_json(&run.join("report.json"))).unwrap();
    assert!(report.manifest.started_at.is_none());
    assert!(report.metrics.auroc.is_some());

    // the joint baseline takes a different path from the same start
    std::fs::write(dir.join("joint.toml"), SMALL.replace("[train]\n", "[train]\nvariant = \"joint\"\n")).unwrap();
    ok(&metaconf(&["--config", "joint.toml", "train", "--data", "data.csv", "--out", "joint"], &dir));
    assert_ne!(
        std::fs::read(run.join("checkpoint.txt")).unwrap(),
        std::fs::read(dir.join("joint/checkpoint.txt")).unwrap()
    );
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn eval_is_repeatable_and_rejects_dimension_mismatch() {
    let dir = workspace("cli-eval", "");
    ok(&metaconf(&["--config", "small.toml", "train", "--data", "data.csv", "--out", "run"], &dir));
    let ck = "run/checkpoint.txt";
    ok(&metaconf(&["--config", "small.toml", "eval", "--checkpoint", ck, "--data", "data.test.csv", "--out", "e1.json"], &dir));
    ok(&metaconf(&["--config", "small.toml", "eval", "--checkpoint", ck, "--data", "data.test.csv", "--out", "e2.json"], &dir));
    assert_eq!(std::fs::read(dir.join("e1.json")).unwrap(), std::fs::read(dir.join("e2.json")).unwrap());
    // the evaluation of the test file matches the training run's report
    assert_eq!(read_json(&dir.join("e1.json"))["metrics"], read_json(&dir.join("run/report.json"))["metrics"]);

    std::fs::write(dir.join("narrow.toml"), SMALL.replace("[benchmark]\n", "[benchmark]\ninput_dim = 5\n")).unwrap();
    ok(&metaconf(&["--config", "narrow.toml", "datagen", "--out", "narrow.csv"], &dir));
    let out = metaconf(&["eval", "--checkpoint", ck, "--data", "narrow.csv"], &dir);
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr(&out);
    assert!(msg.contains('8') && msg.contains('5'), "{msg}");
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn eval_oracle_checkpoint_scores_perfectly() {
    let dir = temp_dir("cli-oracle");
    // feature 0 separates correct from wrong predictions
    let mut csv = String::from("feature_0,task_pred,ground_truth,cluster_id\n");
    for i in 0..20 {
        let wrong = i % 4 == 0;
        csv += &format!("{},{},10,0\n", if wrong { -2.0 } else { 2.0 }, if wrong { 20 } else { 10 });
    }
    std::fs::write(dir.join("d.csv"), csv).unwrap();
    std::fs::write(
        dir.join("oracle.txt"),
        "metaconf-checkpoint v1\ninput_dim 1\nhidden 1\nactivation identity\nparams 4\n1\n0\n1\n0\n",
    )
    .unwrap();
    let out = metaconf(&["eval", "--checkpoint", "oracle.txt", "--data", "d.csv"], &dir);
    ok(&out);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["metrics"]["auroc"], 1.0);
    assert_eq!(report["metrics"]["aupr_error"], 1.0);
    assert_eq!(report["metrics"]["fpr_at_95_tpr"], 0.0);
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn compare_table_matches_run_reports() {
    let dir = workspace("cli-compare", "");
    let out = metaconf(
        &["--config", "small.toml", "compare", "--data", "data.csv", "--out", "cmp", "--seeds", "0,1", "--variants", "full,plain"],
        &dir,
    );
    ok(&out);
    let cmp = read_json(&dir.join("cmp/comparison.json"));
    let rows = cmp["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    for row in rows {
        let variant = row["variant"].as_str().unwrap();
        let values: Vec<f64> = [0, 1]
            .iter()
            .map(|s| {
                let path = dir.join(format!("cmp/runs/{variant}/seed_{s}/report.json"));
                read_json(&path)["metrics"]["auroc"].as_f64().unwrap()
            })
            .collect();
        let mean = (values[0] + values[1]) / 2.0;
        assert!((row["metrics"]["auroc"]["mean"].as_f64().unwrap() - mean).abs() < 1e-12, "{variant}");
        assert_eq!(row["metrics"]["auroc"]["n"], 2);
    }
    let table = std::fs::read_to_string(dir.join("cmp/comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);

    ok(&metaconf(
        &["--config", "small.toml", "compare", "--data", "data.csv", "--out", "one", "--seeds", "0..2", "--variants", "joint"],
        &dir,
    ));
    assert_eq!(read_json(&dir.join("one/comparison.json"))["rows"].as_array().unwrap().len(), 1);

    let single = metaconf(&["--config", "small.toml", "compare", "--data", "data.csv", "--out", "s", "--seeds", "3"], &dir);
    assert_eq!(single.status.code(), Some(1));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn gradcheck_exit_codes_by_mode() {
    let dir = temp_dir("cli-gradcheck");
    for (mode, code) in [("second_order", 0), ("first_order", 2), ("quadratic", 0)] {
        std::fs::write(dir.join("g.toml"), format!("[gradcheck]\nmode = \"{mode}\"\ncases = 5\n")).unwrap();
        let out = metaconf(&["--config", "g.toml", "gradcheck"], &dir);
        assert_eq!(out.status.code(), Some(code), "{mode}: {}", String::from_utf8_lossy(&out.stdout));
    }
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn config_and_usage_errors_exit_1() {
    let dir = temp_dir("cli-errors");
    std::fs::write(dir.join("typo.toml"), "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = metaconf(&["--config", "typo.toml", "gradcheck"], &dir);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));

    assert_eq!(metaconf(&["frobnicate"], &dir).status.code(), Some(1));
    assert_eq!(metaconf(&["train", "--data", "missing.csv", "--out", "r"], &dir).status.code(), Some(1));
    assert_eq!(metaconf(&["--help"], &dir).status.code(), Some(0));
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn out_root_env_redirects_relative_outputs() {
    let dir = temp_dir("cli-outroot");
    let root = dir.join("root");
    std::fs::write(dir.join("small.toml"), SMALL).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_metaconf"))
        .args(["--config", "small.toml", "datagen", "--out", "d.csv"])
        .current_dir(&dir)
        .env(metaconf::runner::OUT_ROOT_ENV, &root)
        .output()
        .unwrap();
    ok(&out);
    assert!(root.join("d.csv").exists() && root.join("d.test.csv").exists());
    assert!(!dir.join("d.csv").exists());
    std::fs::remove_dir_all(dir).ok();
}
