use std::path::Path;
use std::process::{Command, Output};

const MANIFEST: &str = r#"
output_dir = "out"
workers = 2

[policy]
mode = "react_tracker"
budgets = { search = 10, browse = 10 }

[pricing]
input_per_million = "1.25"
output_per_million = "10"
cache_per_million = "0.125"

[providers]
kind = "mock"
mock = { seed = 5, depth = 3, count = 4 }
"#;

fn bats(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bats")).args(args).output().expect("spawn bats")
}

fn setup() -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.toml");
    std::fs::write(&manifest, MANIFEST).unwrap();
    (dir, manifest.to_str().unwrap().to_string())
}

fn text(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn run_then_resume_is_idempotent() {
    let (dir, m) = setup();
    let out = bats(&["run", &m]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("executed 4 skipped 0"));
    let records = dir.path().join("out/records.jsonl");
    let before = (text(&records), text(&dir.path().join("out/events.jsonl")));
    let again = bats(&["run", &m, "--resume"]);
    assert!(String::from_utf8_lossy(&again.stdout).contains("executed 0 skipped 4"));
    assert_eq!(before, (text(&records), text(&dir.path().join("out/events.jsonl"))));
}

#[test]
fn flags_override_manifest() {
    let (dir, m) = setup();
    let out = bats(&[
        "run", &m, "--mode", "react", "--budget-search", "2", "--budget-browse", "3", "--sequential", "--mock-world", "9,4",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let recs = text(&dir.path().join("out/records.jsonl"));
    let first: serde_json::Value = serde_json::from_str(recs.lines().next().unwrap()).unwrap();
    assert_eq!(first["mode"], "react");
    assert_eq!(first["budgets"]["limits"]["search"], 2);
    assert_eq!(first["budgets"]["limits"]["browse"], 3);
    assert_eq!(first["question_id"], "world-9");
    // depth 4 cannot be solved with 2 searches
    assert_eq!(first["correct"], false);
    assert!(first["policy"].as_str().unwrap().contains("sequential"), "{}", first["policy"]);
}

#[test]
fn bats_with_parallel_rejected() {
    let (_dir, m) = setup();
    let out = bats(&["run", &m, "--mode", "bats", "--parallel", "3"]);
    assert!(!out.status.success());
    let out = bats(&["run", &m, "--parallel", "3", "--sequential"]);
    assert!(!out.status.success());
    let out = bats(&["run", &m, "--mock-world", "nope"]);
    assert!(!out.status.success());
}

#[test]
fn report_and_grade() {
    let (dir, m) = setup();
    assert!(bats(&["run", &m, "--mode", "bats", "--early-stop"]).status.success());
    let records = dir.path().join("out/records.jsonl");
    let g = bats(&["grade", records.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&g.stdout).contains("graded 4 ungraded 0"));
    let csv = dir.path().join("r.csv");
    let r = bats(&["report", records.to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let body = text(&csv);
    let mut lines = body.lines();
    assert_eq!(
        lines.next().unwrap(),
        "policy,budget,accuracy,mean_cost_minor_units,mean_search,mean_browse,over_budget_frac,pareto"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "bats+early_stop");
    assert_eq!(row[1], "10");
    assert_eq!(row[2], "1.000000");
    assert_eq!(row[7], "true");
}

#[test]
fn report_without_records_fails() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = bats(&["report", empty.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no records"));
}

#[test]
fn live_manifest_without_credentials_fails_fast() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("d.jsonl"), "{\"id\":\"a\",\"question\":\"q\",\"gold\":\"g\"}\n").unwrap();
    let live = MANIFEST.replace("kind = \"mock\"\nmock = { seed = 5, depth = 3, count = 4 }", "kind = \"live\"\n[providers.live.chat]\nurl = \"http://127.0.0.1:9/v1/chat/completions\"\napi_key_env = \"BATS_TEST_UNSET_KEY\"\n[providers.live.search]\nurl = \"http://127.0.0.1:9/search\"\nbackend = \"serper\"\n[providers.live.browse]\nurl = \"http://127.0.0.1:9/\"\n");
    let manifest = dir.path().join("live.toml");
    std::fs::write(&manifest, format!("dataset = \"d.jsonl\"\n{live}")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_bats"))
        .args(["run", manifest.to_str().unwrap()])
        .env_remove("BATS_TEST_UNSET_KEY")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("BATS_TEST_UNSET_KEY"));
    assert!(!dir.path().join("out/records.jsonl").exists());
}
