use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn xmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xmap")).args(args).output().expect("binary runs")
}

fn run_in(dir: &Path, command: &str, sets: &[&str]) -> Output {
    let mut args = vec![command, "--run-dir", dir.to_str().unwrap()];
    for s in sets {
        args.push("--set");
        args.push(s);
    }
    xmap(&args)
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const QUICK: &[&str] = &["train.epochs=2", "train.n_train=64", "train.n_div=64", "train.n_eval=256", "sweep.depths=[1, 2]", "sweep.seeds=[0, 1]"];

#[test]
fn ambiguity_run_writes_a_reproducible_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("first");
    let out = run_in(&first, "demo-ambiguity", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&first);
    assert_eq!(m["command"], "demo-ambiguity");
    assert_eq!(m["exit_code"], 0);
    assert_eq!(m["seed"], 0);
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 16);
    assert_eq!(m["config"]["train"]["epsilon0"], 0.2);
    let outputs: Vec<&str> = m["outputs"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert_eq!(outputs, ["config.toml", "ambiguity.json"]);
    let record: Value = serde_json::from_str(&read(&first, "ambiguity.json")).unwrap();
    assert_eq!(record["demonstrated"], true);

    // Re-running from the saved config reproduces the run.
    let second = tmp.path().join("second");
    let cfg = first.join("config.toml");
    let out = xmap(&["demo-ambiguity", "--config", cfg.to_str().unwrap(), "--run-dir", second.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(read(&first, "ambiguity.json"), read(&second, "ambiguity.json"));
    assert_eq!(manifest(&second)["config_hash"], m["config_hash"]);
}

#[test]
fn depth_sweep_is_deterministic_across_runs_and_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run_in(&a, "depth-sweep", QUICK).status.code(), Some(0));
    let out = Command::new(env!("CARGO_BIN_EXE_xmap"))
        .args(["depth-sweep", "--jobs", "2", "--run-dir", b.to_str().unwrap()])
        .args(QUICK.iter().flat_map(|s| ["--set", s]))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let csv = read(&a, "depth_sweep.csv");
    assert!(csv.starts_with("depth,div,gt_risk\n1,"), "{csv}");
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(csv, read(&b, "depth_sweep.csv"));
    assert_eq!(read(&a, "depth_sweep_runs.csv"), read(&b, "depth_sweep_runs.csv"));
    assert_eq!(read(&a, "depth_sweep_runs.csv").lines().count(), 5);
}

#[test]
fn infeasible_stopping_run_exits_2_with_its_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_in(
        tmp.path(),
        "stop-criterion",
        &["stop.epochs=3", "run.search_lambda=false", "train.adversary_epochs=1", "train.n_train=64"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(tmp.path(), "bounds.csv").lines().count(), 4);
    assert_eq!(manifest(tmp.path())["exit_code"], 2);
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(xmap(&["no-such-command"]).status.code(), Some(64));
    assert_eq!(xmap(&[]).status.code(), Some(64));
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("r");
    assert_eq!(run_in(&dir, "verify", &["train.epochz=1"]).status.code(), Some(64));
    assert_eq!(run_in(&dir, "verify", &["domain.name=klein-bottle"]).status.code(), Some(64));
    assert_eq!(run_in(&dir, "verify", &["train.epochs"]).status.code(), Some(64));
    assert_eq!(xmap(&["verify", "--jobs", "0"]).status.code(), Some(64));
    let missing = xmap(&["verify", "--config", "/definitely/not/here.toml"]);
    assert_eq!(missing.status.code(), Some(64));
}

#[test]
fn remaining_commands_run_at_toy_scale() {
    let tmp = tempfile::tempdir().unwrap();
    let base = ["train.epochs=2", "train.n_train=64", "train.n_div=64", "train.n_eval=256", "run.depth=1"];
    let with = |extra: &[&'static str]| -> Vec<&'static str> { base.iter().copied().chain(extra.iter().copied()).collect() };

    let dir = tmp.path().join("per-sample");
    let out = run_in(&dir, "per-sample", &with(&["per_sample.probes=3", "per_sample.adversary_epochs=1"]));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(&dir, "scatter.csv").lines().count(), 4);

    let dir = tmp.path().join("hyperband");
    let out = run_in(
        &dir,
        "hyperband",
        &with(&["run.search_lambda=false", "hyperband.max_resource=3", "hyperband.epochs_per_unit=1", "hyperband.space.depth=[1, 2]"]),
    );
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(read(&dir, "hyperband.csv").starts_with("config_key,depth,width,batch,lr,final_T,loss,gt_risk\n"));
    assert!(dir.join("store").is_dir());

    let dir = tmp.path().join("distill");
    let out = run_in(&dir, "distill", &with(&["distill.k1=1", "distill.k2=2"]));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_str(&read(&dir, "distill.json")).unwrap();
    assert_eq!(report["chosen"]["k1"], 1);
    assert_eq!(report["chosen"]["k2"], 2);
    assert_eq!(report["probes"].as_array().unwrap().len(), 3);

    let dir = tmp.path().join("nonunique");
    let out = run_in(&dir, "nonunique", &with(&["domain.name=multi-target", "run.depth=2", "nonunique.epochs=2"]));
    let code = out.status.code();
    assert!(code == Some(0) || code == Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(read(&dir, "bounds.csv").starts_with("epoch,"));
}
