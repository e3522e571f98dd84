use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn attrex(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attrex"))
        .args(args)
        .env_remove("EXTRACT_API_KEY")
        .env_remove("OPENAI_API_KEY")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn prepare(root: &Path) -> std::path::PathBuf {
    let data = root.join("toy");
    let out = attrex(&["prepare", "--kind", "toy", "--out", s(&data), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("test"));
    data
}

#[test]
fn oracle_run_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepare(tmp.path());
    let run = tmp.path().join("run");
    let out = attrex(&[
        "extract", "--data", s(&data), "--run-dir", s(&run), "--design", "list", "--demos", "3", "--selector", "mmr",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = attrex(&["evaluate", "--data", s(&data), "--run-dir", s(&run)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["overall"]["metrics"]["f1"], 1.0);

    let out = attrex(&["report-cost", "--run-dir", s(&run)]);
    assert!(out.status.success());
    let cost: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cost["requests"], 15);
}

#[test]
fn corrupted_oracle_scores_eighty_percent() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepare(tmp.path());
    let run = tmp.path().join("run");
    let out = attrex(&["extract", "--data", s(&data), "--run-dir", s(&run), "--demos", "0", "--corruption", "0.2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(attrex(&["evaluate", "--data", s(&data), "--run-dir", s(&run)]).status.success());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["overall"]["metrics"]["f1"], 0.8);
}

#[test]
fn grid_config_runs_every_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepare(tmp.path());
    let config = tmp.path().join("grid.toml");
    fs::write(
        &config,
        format!(
            "seed = 1\nout_dir = {:?}\ndatasets = [{:?}]\ndesigns = [\"list\", \"json-5-val\"]\nselectors = [\"fixed\", \"semsim\"]\ndemos = [0, 2]\n",
            s(&tmp.path().join("runs")),
            s(&data)
        ),
    )
    .unwrap();
    let out = attrex(&["extract", "--config", s(&config)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = attrex(&["evaluate", "--config", s(&config)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cells: Vec<_> = fs::read_dir(tmp.path().join("runs/toy")).unwrap().collect();
    assert_eq!(cells.len(), 6);
}

#[test]
fn export_finetune_designs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepare(tmp.path());
    let a = tmp.path().join("a.jsonl");
    let b = tmp.path().join("b.jsonl");
    for out in [&a, &b] {
        let o = attrex(&["export-finetune", "--data", s(&data), "--out", s(out), "--design", "json", "--example-values", "10"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(fs::read_to_string(&a).unwrap().lines().count(), 45);
    let o = attrex(&["export-finetune", "--data", s(&data), "--out", s(&a), "--design", "compact"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn exit_codes_follow_error_kind() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(attrex(&["extract", "--bogus"]).status.code(), Some(1));
    assert_eq!(attrex(&["prepare", "--kind", "nope", "--out", s(tmp.path())]).status.code(), Some(1));
    assert_eq!(attrex(&["--help"]).status.code(), Some(0));

    let missing = tmp.path().join("missing");
    let o = attrex(&["prepare", "--kind", "ae-110k", "--input", s(&missing), "--out", s(&tmp.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));

    let data = prepare(tmp.path());
    let empty = tmp.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let o = attrex(&["evaluate", "--data", s(&data), "--run-dir", s(&empty)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("incomplete"));

    // nothing listens on port 9, so every attempt fails in transport
    let o = attrex(&[
        "extract", "--data", s(&data), "--run-dir", s(&tmp.path().join("http")), "--backend", "http",
        "--base-url", "http://127.0.0.1:9/v1", "--max-attempts", "1", "--demos", "0",
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    let o = attrex(&["extract", "--data", s(&data), "--run-dir", s(&tmp.path().join("r")), "--backend", "replay"]);
    assert_eq!(o.status.code(), Some(1));
}
