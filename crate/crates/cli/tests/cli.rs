use std::path::Path;
use std::process::{Command, Output};

fn run_env(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_polyckt"));
    c.args(args).env_remove("POLYCKT_SEED");
    if let Some(v) = seed_env {
        c.env("POLYCKT_SEED", v);
    }
    c.output().unwrap()
}

fn run(args: &[&str]) -> Output {
    run_env(args, None)
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the single stderr line of a failing run.
fn fails(args: &[&str]) -> (i32, String) {
    let out = run(args);
    let err = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = err.lines().collect();
    assert_eq!(lines.len(), 1, "{args:?}: {err}");
    assert!(lines[0].starts_with("error: "), "{err}");
    (out.status.code().unwrap(), lines[0].to_string())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn max_error(csv: &str) -> f64 {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "max_error").unwrap();
    lines.next().unwrap().split(',').nth(col).unwrap().parse().unwrap()
}

#[test]
fn approx_relu_degree_one() {
    let csv = ok(&["approx", "--fn", "relu", "--degree", "1", "--range", "-1,1"]);
    assert!((max_error(&csv) - 0.25).abs() < 1e-8, "{csv}");
}

#[test]
fn approx_gelu_beats_relu_at_degree_four() {
    let g = max_error(&ok(&["approx", "--fn", "gelu", "--degree", "4", "--range", "-5,5"]));
    let r = max_error(&ok(&["approx", "--fn", "relu", "--degree", "4", "--range", "-5,5"]));
    assert!(g < r, "{g} {r}");
}

#[test]
fn approx_sweep_rows() {
    let csv = ok(&["approx", "--fn", "relu", "--degree", "2,4", "--range-sweep", "-1,1..-3,3,3", "--method", "lstsq"]);
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows[0].starts_with("relu,lstsq,-1,1,2,"));
    assert!(rows[5].starts_with("relu,lstsq,-3,3,4,"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(fails(&["approx", "--fn", "relu", "--degree", "2", "--range", "1,-1"]).0, 1);
    assert_eq!(fails(&["approx", "--fn", "relu", "--degree", "2", "--range", "0,1", "--bogus"]).0, 1);
    assert_eq!(fails(&["approx", "--fn", "tanh", "--degree", "2", "--range", "0,1"]).0, 1);
    assert_eq!(fails(&["approx", "--fn", "relu", "--degree", "2", "--range", "a,b"]).0, 1);
    assert_eq!(fails(&["approx", "--fn", "relu", "--degree", "2"]).0, 1);
    assert_eq!(fails(&["remove-skips", "--n", "0"]).0, 1);
    assert_eq!(fails(&["frobnicate"]).0, 1);
}

#[test]
fn help_succeeds_for_every_subcommand() {
    let top = ok(&["--help"]);
    for sub in [
        "approx",
        "build",
        "train",
        "polyfy",
        "analyze",
        "place-skips",
        "remove-skips",
        "simulate",
        "report",
        "rerun",
    ] {
        assert!(top.contains(sub), "{sub}");
        let help = ok(&[sub, "--help"]);
        assert!(help.contains("Usage: polyckt"), "{sub}");
    }
    let help = ok(&["simulate", "--help"]);
    for flag in ["--graph", "--weights", "--model", "--inputs", "--synthetic", "--profile", "--frac-bits", "--noise-sigma", "--seed", "--out"] {
        assert!(help.contains(flag), "{flag}");
    }
}

#[test]
fn remove_skips_schedule() {
    let csv = ok(&["remove-skips", "--n", "4"]);
    let scales: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(scales, ["0.75", "0.5", "0.25", "0"]);
}

#[test]
fn input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let (code, msg) = fails(&["analyze", "--graph", s(&missing)]);
    assert_eq!(code, 2);
    assert!(msg.contains("nope.json"), "{msg}");

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(fails(&["analyze", "--graph", s(&bad)]).0, 2);

    let (code, _) = fails(&["train", "--data", s(dir.path()), "--out", s(&dir.path().join("m"))]);
    assert_eq!(code, 2);

    // non-polynomial graphs cannot be analyzed
    let toy = dir.path().join("toy");
    ok(&["build", "--blocks", "1", "--channels", "2", "--image", "8", "--out", s(&toy)]);
    assert_eq!(fails(&["analyze", "--model", s(&toy)]).0, 2);
    assert_eq!(fails(&["simulate", "--model", s(&toy), "--synthetic", "2"]).0, 2);
}

#[test]
fn numeric_failures_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    let (code, msg) = fails(&[
        "train",
        "--data",
        "synthetic",
        "--pretrain-epochs",
        "2",
        "--lr",
        "1e200",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, 3, "{msg}");
    assert!(msg.contains("diverged"), "{msg}");
    assert!(out.join("checkpoint/weights.pckt").exists());

    // x^18 stand-ins overflow the integer precision
    let big = dir.path().join("big");
    ok(&["build", "--blocks", "2", "--channels", "4", "--image", "8", "--degree", "18", "--out", s(&big)]);
    assert_eq!(fails(&["simulate", "--model", s(&big), "--synthetic", "4"]).0, 3);
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let seed_of = |name: &str, extra: &[&str], env: Option<&str>| {
        let out = dir.path().join(name);
        let mut args = vec!["build", "--blocks", "1", "--channels", "2", "--image", "8", "--out", s(&out)];
        args.extend(extra);
        let o = run_env(&args, env);
        assert!(o.status.success());
        json(&out.join("manifest.json"))["seed"].as_u64().unwrap()
    };
    assert_eq!(seed_of("a", &[], None), 0);
    assert_eq!(seed_of("b", &[], Some("17")), 17);
    assert_eq!(seed_of("c", &["--seed", "5"], Some("17")), 5);
    let w = |n: &str| std::fs::read(dir.path().join(n).join("weights.pckt")).unwrap();
    assert_ne!(w("a"), w("b"));

    // config file beats the environment
    let cfg = dir.path().join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{"seed": 9, "synthetic": {"samples": 80}, "model": {"blocks": 1, "channels": 2},
            "train": {"range_epochs": 1, "finetune_epochs": 1, "degree": 4}}"#,
    )
    .unwrap();
    let out = dir.path().join("t");
    let o = run_env(&["train", "--config", s(&cfg), "--data", "synthetic", "--out", s(&out)], Some("17"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["seed"], 9);
    assert_eq!(m["config"]["train"]["seed"], 9);
    assert_eq!(m["config"]["train"]["degree"], 4);

    assert_eq!(run_env(&["build", "--out", s(&dir.path().join("x"))], Some("abc")).status.code(), Some(1));
}

#[test]
fn config_rejects_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"learning_rate": 0.1}}"#).unwrap();
    let (code, msg) = fails(&["train", "--config", s(&cfg), "--data", "synthetic", "--out", s(&dir.path().join("m"))]);
    assert_eq!(code, 2);
    assert!(msg.contains("learning_rate"), "{msg}");
}

#[test]
fn simulate_agrees_with_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().join("base");
    let pf = dir.path().join("pf");
    ok(&["build", "--blocks", "2", "--channels", "4", "--image", "8", "--classes", "4", "--out", s(&base)]);
    ok(&["polyfy", "--model", s(&base), "--data", "synthetic", "--degree", "8", "--out", s(&pf)]);
    let sim = dir.path().join("sim");
    ok(&["simulate", "--model", s(&pf), "--synthetic", "8", "--out", s(&sim)]);
    let an: serde_json::Value = serde_json::from_str(&ok(&["analyze", "--model", s(&pf)])).unwrap();
    let summary = json(&sim.join("summary.json"));
    assert_eq!(summary["bootstraps"], an["bootstraps"]);
    assert!(summary["mse"].as_f64().unwrap() < 1e-10);
    let trace = std::fs::read_to_string(sim.join("trace.csv")).unwrap();
    assert!(trace.starts_with("node_id,kind,cidx_in,cidx_out,quant_err_max,bootstrap\n"));

    // coarser precision hurts
    let coarse: serde_json::Value =
        serde_json::from_str(ok(&["simulate", "--model", s(&pf), "--synthetic", "8", "--frac-bits", "12"]).trim()).unwrap();
    assert!(coarse["mse"].as_f64().unwrap() > summary["mse"].as_f64().unwrap());
}

#[test]
fn report_pairs_analyses() {
    let dir = tempfile::tempdir().unwrap();
    let toy = dir.path().join("toy");
    ok(&["build", "--blocks", "2", "--channels", "4", "--image", "8", "--out", s(&toy)]);
    let runs = dir.path().join("runs");
    for d in ["2", "18"] {
        let g = toy.join("graph.json");
        ok(&["analyze", "--graph", s(&g), "--degree", d, "--out", s(&runs.join(format!("w{d}")))]);
        ok(&["analyze", "--graph", s(&g), "--degree", d, "--no-skips", "--out", s(&runs.join(format!("n{d}")))]);
    }
    let out = dir.path().join("table.csv");
    ok(&["report", "--runs", s(&runs), "--out", s(&out)]);
    let csv = std::fs::read_to_string(&out).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("label,degree,bootstraps_with,bootstraps_without,ratio,latency_with,latency_without,total_speedup")
    );
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0][1], rows[1][1]), ("2", "18"));
    let ratio = |r: &Vec<&str>| r[4].parse::<f64>().unwrap();
    assert!(ratio(&rows[0]) >= ratio(&rows[1]));
    assert!(dir.path().join("table.csv.manifest.json").exists());

    // a lone analysis has nothing to pair with
    let lone = dir.path().join("lone");
    std::fs::create_dir_all(&lone).unwrap();
    std::fs::copy(runs.join("w2/summary.json"), lone.join("summary.json")).unwrap();
    assert_eq!(fails(&["report", "--runs", s(&lone)]).0, 2);
}

#[test]
fn place_and_remove_skips_write_graphs() {
    let dir = tempfile::tempdir().unwrap();
    let toy = dir.path().join("toy");
    ok(&["build", "--blocks", "2", "--channels", "4", "--image", "8", "--degree", "4", "--out", s(&toy)]);
    let g = toy.join("graph.json");
    assert_eq!(fails(&["place-skips", "--graph", s(&g)]).0, 2);
    let placed = dir.path().join("placed");
    let csv = ok(&["place-skips", "--graph", s(&g), "--strip", "--out", s(&placed)]);
    assert!(csv.starts_with("i,j,cost\n"));
    let summary = json(&placed.join("summary.json"));
    assert_eq!(summary["placements"].as_array().unwrap().len(), csv.lines().count() - 1);

    let removed = dir.path().join("removed");
    ok(&["remove-skips", "--n", "4", "--graph", s(&g), "--epoch", "4", "--out", s(&removed)]);
    let before = std::fs::read_to_string(&g).unwrap();
    let after = std::fs::read_to_string(removed.join("graph.json")).unwrap();
    assert_ne!(before, after);
    let an: serde_json::Value = serde_json::from_str(&ok(&["analyze", "--graph", s(&removed.join("graph.json"))])).unwrap();
    assert_eq!(an["skips"], 0);
    assert_eq!(json(&removed.join("summary.json"))["extra_epochs"], 1);
    assert_eq!(fails(&["remove-skips", "--n", "4", "--graph", s(&g), "--epoch", "5"]).0, 1);
}

#[test]
fn rerun_rejects_bad_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("manifest.json");
    std::fs::write(&m, "{}").unwrap();
    assert_eq!(fails(&["rerun", "--manifest", s(&m)]).0, 2);
    assert_eq!(fails(&["rerun", "--manifest", s(&dir.path().join("missing.json"))]).0, 2);
}
