use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_adagcl"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .env("ADAGCL_OUTPUT_DIR", dir.join("runs"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("run_manifest.json")).unwrap()).unwrap()
}

/// Two communities of 15 users and 20 items.
fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::new();
    for u in 0..30 {
        for i in 0..40 {
            if (u / 15 == i / 20 && (u * 7 + i * 3) % 4 == 0) || (u * 13 + i) % 97 == 0 {
                body.push_str(&format!("u{u}\ti{i}\n"));
            }
        }
    }
    let input = dir.path().join("inter.tsv");
    fs::write(&input, body).unwrap();
    ok(&run(dir.path(), &PREPARE));
    (dir, input)
}

const PREPARE: [&str; 7] = [
    "prepare",
    "--input",
    "inter.tsv",
    "--out",
    "split",
    "--split-mode",
    "global",
];

const SMALL: [&str; 6] = ["--max-epochs", "2", "--dim", "6", "--batch-size", "64"];

fn train(dir: &Path, out: &str, extra: &[&str]) -> String {
    let mut args = vec!["train", "--split", "split", "--out", out];
    args.extend(SMALL);
    args.extend(extra);
    ok(&run(dir, &args))
}

#[test]
fn prepare_is_idempotent() {
    let (dir, _) = workspace();
    let m = manifest(&dir.path().join("split"));
    assert_eq!(m["status"], "success");
    assert_eq!(m["command"], "prepare");
    let before = fs::read(dir.path().join("split/run_manifest.json")).unwrap();
    let out = ok(&run(dir.path(), &PREPARE));
    assert!(out.contains("up-to-date"), "{out}");
    assert_eq!(
        fs::read(dir.path().join("split/run_manifest.json")).unwrap(),
        before
    );
    let out = ok(&run(
        dir.path(),
        &[&PREPARE[..], &["--split-seed", "9"]].concat(),
    ));
    assert!(!out.contains("up-to-date"));
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &["prepare", "--input", "absent.tsv", "--out", "split"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.tsv"));
}

#[test]
fn usage_errors_exit_one() {
    let (dir, _) = workspace();
    for args in [
        vec!["train", "--split", "split", "--no-such-flag", "1"],
        vec!["train", "--split", "split", "--dim", "0"],
        vec!["train", "--split", "split", "--variant", "mystery"],
        vec!["frobnicate"],
    ] {
        assert_eq!(run(dir.path(), &args).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn overrides_round_trip_into_manifest() {
    let (dir, _) = workspace();
    train(
        dir.path(),
        "edge",
        &[
            "--variant",
            "edge_drop",
            "--lambda1",
            "0.1",
            "--edge-drop-ratio=0.2",
        ],
    );
    let m = manifest(&dir.path().join("edge"));
    assert_eq!(m["status"], "success");
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["config"]["variant"], "edge_drop");
    assert_eq!(m["config"]["lambda1"], "0.1");
    assert_eq!(m["config"]["edge_drop_ratio"], "0.2");
    assert_eq!(m["seeds"]["seed"], 2023);
    assert!(m["inputs"]["split"].as_str().unwrap().len() == 64);
    assert!(m["finished_at"].is_string());
    for f in [
        "model.ckpt",
        "last.ckpt",
        "history.csv",
        "history.json",
        "eval_validation.json",
        "config.txt",
    ] {
        assert!(dir.path().join("edge").join(f).exists(), "{f}");
    }
}

#[test]
fn config_file_then_overrides() {
    let (dir, _) = workspace();
    fs::write(
        dir.path().join("run.cfg"),
        "# test\ndim = 5\nlambda1 = 0.5\n",
    )
    .unwrap();
    ok(&run(
        dir.path(),
        &[
            "train",
            "--split",
            "split",
            "--out",
            "cfg",
            "--config",
            "run.cfg",
            "--lambda1",
            "0.25",
            "--max-epochs",
            "1",
        ],
    ));
    let m = manifest(&dir.path().join("cfg"));
    assert_eq!(m["config"]["dim"], "5");
    assert_eq!(m["config"]["lambda1"], "0.25");
    assert!(m["inputs"]["config_file"].is_string());
}

#[test]
fn identical_runs_identical_history() {
    let (dir, _) = workspace();
    train(dir.path(), "a", &[]);
    train(dir.path(), "b", &[]);
    let a = fs::read(dir.path().join("a/history.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/history.csv")).unwrap());
    assert_eq!(
        fs::read(dir.path().join("a/model.ckpt")).unwrap(),
        fs::read(dir.path().join("b/model.ckpt")).unwrap()
    );
}

#[test]
fn untrained_checkpoint_evaluates() {
    let (dir, _) = workspace();
    ok(&run(
        dir.path(),
        &[
            "train",
            "--split",
            "split",
            "--out",
            "zero",
            "--max-epochs",
            "0",
            "--dim",
            "6",
        ],
    ));
    let out = ok(&run(
        dir.path(),
        &[
            "eval",
            "--checkpoint",
            "zero/model.ckpt",
            "--split",
            "split",
            "--out",
            "ev",
        ],
    ));
    assert!(out.contains("recall@20"));
    let rep: Value =
        serde_json::from_slice(&fs::read(dir.path().join("ev/eval_test.json")).unwrap()).unwrap();
    assert_eq!(rep["cutoffs"], serde_json::json!([20, 40]));
    assert_eq!(rep["mode"], "test");
    for key in [
        "recall",
        "ndcg",
        "users",
        "per_user_recall",
        "per_user_ndcg",
        "meta",
    ] {
        assert!(!rep[key].is_null(), "{key}");
    }
    let r = rep["recall"][0].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&r));
    assert_eq!(manifest(&dir.path().join("ev"))["command"], "eval");
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let (dir, _) = workspace();
    ok(&run(
        dir.path(),
        &[
            "train",
            "--split",
            "split",
            "--out",
            "zero",
            "--max-epochs",
            "0",
            "--dim",
            "4",
        ],
    ));
    fs::write(dir.path().join("small.tsv"), "a\tx\nb\ty\na\ty\nb\tx\n").unwrap();
    ok(&run(
        dir.path(),
        &[
            "prepare",
            "--input",
            "small.tsv",
            "--out",
            "small",
            "--ratios",
            "1,0,0",
        ],
    ));
    let out = run(
        dir.path(),
        &[
            "eval",
            "--checkpoint",
            "zero/model.ckpt",
            "--split",
            "small",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn export_rows_and_header() {
    let (dir, _) = workspace();
    train(dir.path(), "full", &[]);
    let (users, items) = {
        let m: Value =
            serde_json::from_slice(&fs::read(dir.path().join("split/manifest.json")).unwrap())
                .unwrap();
        (
            m["counts"]["users"].as_u64().unwrap(),
            m["counts"]["items"].as_u64().unwrap(),
        )
    };
    let mut bodies = Vec::new();
    for which in ["main", "view1", "view2"] {
        let path = format!("exp/{which}.csv");
        ok(&run(
            dir.path(),
            &[
                "export",
                "--checkpoint",
                "full/model.ckpt",
                "--split",
                "split",
                "--which",
                which,
                "--out",
                &path,
            ],
        ));
        let text = fs::read_to_string(dir.path().join(&path)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "entity_type,index,v0,v1,v2,v3,v4,v5");
        assert_eq!(lines.count() as u64, users + items);
        bodies.push(text);
    }
    assert_ne!(bodies[0], bodies[2]);
    assert_eq!(manifest(&dir.path().join("exp"))["status"], "success");
}

#[test]
fn view_export_needs_generators() {
    let (dir, _) = workspace();
    train(dir.path(), "plain", &["--lambda1", "0"]);
    let out = run(
        dir.path(),
        &[
            "export",
            "--checkpoint",
            "plain/model.ckpt",
            "--split",
            "split",
            "--which",
            "view1",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn divergent_training_exits_three() {
    let (dir, _) = workspace();
    let out = run(
        dir.path(),
        &[
            "train",
            "--split",
            "split",
            "--out",
            "nan",
            "--lr",
            "1e300",
            "--dim",
            "6",
            "--max-epochs",
            "3",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let m = manifest(&dir.path().join("nan"));
    assert_eq!(m["status"], "failed");
    assert_eq!(m["exit_code"], 3);
}

#[test]
fn experiments_land_in_one_stamped_directory() {
    let (dir, _) = workspace();
    let mut args = vec![
        "experiment",
        "noise",
        "--split",
        "split",
        "--ratios",
        "0.1",
        "--models",
        "lightgcn",
    ];
    args.extend(SMALL);
    let out = ok(&run(dir.path(), &args));
    assert!(out.contains("noise 0.10"), "{out}");
    let runs: Vec<_> = fs::read_dir(dir.path().join("runs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(runs.len(), 1);
    assert!(runs[0]
        .file_name()
        .unwrap()
        .to_string_lossy()
        .starts_with("experiment-noise-"));
    for f in ["noise.csv", "noise.json", "noise.svg", "run_manifest.json"] {
        assert!(runs[0].join(f).exists(), "{f}");
    }

    let mut args = vec![
        "experiment",
        "sparsity",
        "--split",
        "split",
        "--out",
        "sp",
        "--models",
        "lightgcn",
    ];
    args.extend(SMALL);
    ok(&run(dir.path(), &args));
    for f in [
        "sparsity_users_lightgcn.csv",
        "sparsity_items_lightgcn.csv",
        "sparsity.json",
        "sparsity_users.svg",
    ] {
        assert!(dir.path().join("sp").join(f).exists(), "{f}");
    }

    let mut args = vec![
        "experiment",
        "sweep",
        "--split",
        "split",
        "--out",
        "sw",
        "--grid",
        "1,0.001",
    ];
    args.extend(SMALL);
    ok(&run(dir.path(), &args));
    let csv = fs::read_to_string(dir.path().join("sw/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(&run(dir.path(), &["--help"]));
    for sub in ["prepare", "train", "eval", "experiment", "export"] {
        assert!(out.contains(sub));
    }
    assert!(ok(&run(dir.path(), &["--version"])).starts_with("adagcl 0.1.0"));
}
