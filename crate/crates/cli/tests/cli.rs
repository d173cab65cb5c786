use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_landscaper"))
}

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} exited {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

/// Ten valid records sharing `H04L9/00`, forty retrieved negatives on other
/// codes, and a background where `H04L9/00` is rare.
fn write_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let line = |id: String, cpc: &str, valid: bool| {
        json!({
            "id": id,
            "title": "encrypted channel",
            "abstract": "a key exchange over an encrypted channel",
            "cpc": [cpc],
            "ipc": ["H04L9/00"],
            "uspc": ["380/255"],
            "valid": valid,
        })
        .to_string()
    };
    let mut retrieved: Vec<String> = (0..10).map(|i| line(format!("V{i}"), "H04L9/00", true)).collect();
    retrieved.extend((0..40).map(|i| line(format!("N{i}"), "G06F21/00", false)));
    let background: Vec<String> = (0..500).map(|i| line(format!("B{i}"), "G06F21/00", false)).collect();
    let (r, b) = (dir.join("retrieved.jsonl"), dir.join("background.jsonl"));
    std::fs::write(&r, retrieved.join("\n") + "\n").unwrap();
    std::fs::write(&b, background.join("\n") + "\n").unwrap();
    (r, b)
}

#[test]
fn convert_query_prints_golden_sql() {
    let formula = repo_file("crates/core/tests/fixtures/mpuart_formula.txt");
    let golden = std::fs::read_to_string(repo_file("crates/core/tests/fixtures/mpuart_golden.sql")).unwrap();
    let sql = ok(&["convert-query", "--query", s(&formula)]);
    assert_eq!(sql.trim_end(), golden.trim_end());
}

#[test]
fn exit_codes_separate_usage_and_data_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&["no-such-command"]), 1);
    assert_eq!(code(&["train"]), 1);
    assert_eq!(code(&["build-dataset", "--input", "x.jsonl", "--negatives", "5,5"]), 1);
    assert_eq!(code(&["--help"]), 0);
    let missing = tmp.path().join("missing.jsonl");
    assert_eq!(code(&["--output-dir", s(tmp.path()), "ingest", "--input", s(&missing)]), 2);
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "no_such_key = 3\n").unwrap();
    let formula = repo_file("crates/core/tests/fixtures/mpuart_formula.txt");
    assert_eq!(code(&["--config", s(&bad), "convert-query", "--query", s(&formula)]), 1);
    let broken = tmp.path().join("broken.txt");
    std::fs::write(&broken, "(virtual and").unwrap();
    assert_ne!(code(&["convert-query", "--query", s(&broken)]), 0);
}

#[test]
fn build_dataset_splits_ten_valid_records_six_two_two() {
    let tmp = tempfile::tempdir().unwrap();
    let (retrieved, background) = write_fixture(tmp.path());
    let out = tmp.path().join("ds");
    ok(&[
        "--seed",
        "3",
        "--run-dir",
        s(&out),
        "build-dataset",
        "--input",
        s(&retrieved),
        "--reference",
        s(&background),
        "--negatives",
        "20,5,5",
    ]);
    let m = manifest(&out.join("dataset"));
    assert_eq!(m["positives"], json!([6, 2, 2]));
    assert_eq!(m["counts"], json!([26, 7, 7]));
    assert_eq!(m["important_codes"], json!(["H04L9/00"]));

    let all = tmp.path().join("all");
    ok(&[
        "--run-dir",
        s(&all),
        "build-dataset",
        "--input",
        s(&retrieved),
        "--reference",
        s(&background),
        "--all-negatives",
    ]);
    assert_eq!(manifest(&all.join("dataset"))["counts"], json!([30, 10, 10]));

    // without the background the valid code is not rarer anywhere else
    let none = tmp.path().join("none");
    assert_eq!(
        code(&["--run-dir", s(&none), "build-dataset", "--input", s(&retrieved), "--emergence-ratio", "100"]),
        2
    );
}

#[test]
fn run_directories_detect_partial_and_repeated_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let (retrieved, _) = write_fixture(tmp.path());
    let dir = tmp.path().join("ingest");
    let args = ["--run-dir", s(&dir), "ingest", "--input", s(&retrieved)];
    ok(&args);
    let m = manifest(&dir);
    assert_eq!(m["command"], "ingest");
    assert_eq!(m["summary"]["records"], 50);
    assert!(!dir.join(".incomplete").exists());

    let before = std::fs::read(dir.join("manifest.json")).unwrap();
    assert_eq!(ok(&args).trim(), s(&dir));
    assert_eq!(std::fs::read(dir.join("manifest.json")).unwrap(), before, "up-to-date rerun rewrote the run");

    assert_eq!(code(&["--seed", "9", "--run-dir", s(&dir), "ingest", "--input", s(&retrieved)]), 1);
    ok(&["--seed", "9", "--force", "--run-dir", s(&dir), "ingest", "--input", s(&retrieved)]);
    assert_eq!(manifest(&dir)["config"]["seed"], 9);

    std::fs::write(dir.join(".incomplete"), "ingest").unwrap();
    assert_eq!(code(&args), 1);
    ok(&["--force", "--run-dir", s(&dir), "ingest", "--input", s(&retrieved)]);

    let foreign = tmp.path().join("foreign");
    std::fs::create_dir(&foreign).unwrap();
    std::fs::write(foreign.join("keep.txt"), "mine").unwrap();
    assert_eq!(code(&["--force", "--run-dir", s(&foreign), "ingest", "--input", s(&retrieved)]), 1);
    assert!(foreign.join("keep.txt").exists());
}

/// Runs synth through evaluate with the reduced configuration; returns the
/// evaluate stdout.
fn pipeline(root: &Path, config: &Path, extra: &[&str]) -> String {
    let step = |name: &str, args: &[&str]| {
        let dir = root.join(name);
        let mut all = vec!["--config", s(config), "--deterministic", "--run-dir", s(&dir)];
        all.extend_from_slice(args);
        ok(&all)
    };
    step("synth", &["synth", "--retrieved", "5000", "--positive-rate", "0.02", "--background", "15000"]);
    let (retrieved, background) = (root.join("synth/retrieved.jsonl"), root.join("synth/background.jsonl"));
    step("dataset", &["build-dataset", "--input", s(&retrieved), "--reference", s(&background), "--all-negatives"]);
    let ds = root.join("dataset");
    let mut codes = vec!["pretrain-codes", "--dataset", s(&ds)];
    codes.extend_from_slice(extra);
    step("codes", &codes);
    let mut text = vec!["pretrain-text", "--dataset", s(&ds)];
    text.extend_from_slice(extra);
    step("text", &text);
    let (c, t) = (root.join("codes"), root.join("text"));
    let mut train = vec!["train", "--dataset", s(&ds), "--codes", s(&c), "--text", s(&t)];
    train.extend_from_slice(extra);
    step("train", &train);
    let model = root.join("train");
    step("evaluate", &["evaluate", "--model", s(&model), "--dataset", s(&ds)])
}

fn metric(stdout: &str, name: &str) -> f64 {
    stdout
        .lines()
        .find_map(|l| l.strip_prefix(name).map(|v| v.trim().parse().unwrap()))
        .unwrap_or_else(|| panic!("no {name} in {stdout}"))
}

#[test]
fn synthetic_pipeline_reaches_high_average_precision() {
    let tmp = tempfile::tempdir().unwrap();
    let config = repo_file("configs/smoke.toml");
    let stdout = pipeline(tmp.path(), &config, &[]);
    let ap = metric(&stdout, "average_precision");
    assert!(ap >= 0.9, "test AP {ap}");

    let predicted = tmp.path().join("predict");
    ok(&[
        "--config",
        s(&config),
        "--run-dir",
        s(&predicted),
        "predict",
        "--model",
        s(&tmp.path().join("train")),
        "--input",
        s(&tmp.path().join("dataset/dataset/test.jsonl")),
    ]);
    let rows = std::fs::read_to_string(predicted.join("predictions.tsv")).unwrap();
    assert_eq!(rows.lines().filter(|l| !l.starts_with("id\t")).count(), 1000);
}

#[test]
fn deterministic_runs_write_identical_bytes() {
    let config = repo_file("configs/smoke.toml");
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let quick = ["--epochs", "1"];
    let out_a = pipeline(a.path(), &config, &quick);
    let out_b = pipeline(b.path(), &config, &quick);
    let metrics = |out: &str| out.lines().filter(|l| !l.starts_with('/')).collect::<Vec<_>>().join("\n");
    assert_eq!(metrics(&out_a), metrics(&out_b));
    for file in [
        "synth/retrieved.jsonl",
        "dataset/dataset/train.jsonl",
        "codes/cpc.emb",
        "codes/uspc.emb",
        "text/tokens.emb",
        "train/model.ckpt",
        "train/history.csv",
        "evaluate/report.txt",
    ] {
        let (x, y) = (std::fs::read(a.path().join(file)).unwrap(), std::fs::read(b.path().join(file)).unwrap());
        assert!(x == y, "{file} differs between runs");
    }
}
