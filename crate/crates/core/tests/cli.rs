use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use modal_market::scenario::{builtin_5node, save};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_modal-market"));
    c.env_remove("MODAL_MARKET_SEED");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_builtin_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["solve", "--scenario", "builtin:5node", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("iterations") && text.contains("wall time"));
    for f in [
        "solution.json",
        "mode_shares.csv",
        "prices.csv",
        "drivers.csv",
        "run_manifest.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let sol: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("solution.json")).unwrap()).unwrap();
    assert_eq!(sol["converged"], true);
    assert!(sol["residual"]["inf_norm"].as_f64().unwrap() <= 1e-10);
    let drivers = fs::read_to_string(dir.path().join("drivers.csv")).unwrap();
    assert!(drivers.starts_with("node,Q,signout,lambda\n"));
}

#[test]
fn json_format() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "solve",
        "--scenario",
        "builtin:sioux1",
        "--format",
        "json",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["ods"].as_array().unwrap().len(), 7);
    assert!(!dir.path().join("prices.csv").exists());
}

#[test]
fn forced_non_convergence_exits_3_with_flagged_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "solve",
        "--scenario",
        "builtin:5node",
        "--max-iter",
        "1",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(3));
    let sol: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("solution.json")).unwrap()).unwrap();
    assert_eq!(sol["converged"], false);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["exit_code"], 3);
}

#[test]
fn input_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(
        run(&["solve", "--scenario", path(&missing)]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["solve", "--scenario", "builtin:nowhere"]).status.code(),
        Some(2)
    );
    assert_eq!(run(&["solve"]).status.code(), Some(2));

    let mut sc = builtin_5node();
    sc.ods[1].transit_fare = -1.0;
    let bad = dir.path().join("bad.json");
    fs::write(&bad, save(&sc)).unwrap();
    let o = run(&[
        "solve",
        "--scenario",
        path(&bad),
        "--out",
        path(&dir.path().join("o")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/ods/1/transit_fare"));
}

#[test]
fn scenario_file_matches_builtin() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("five.json");
    fs::write(&file, save(&builtin_5node())).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(
        run(&["solve", "--scenario", path(&file), "--out", path(&a)])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        run(&["solve", "--scenario", "builtin:5node", "--out", path(&b)])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        fs::read(a.join("prices.csv")).unwrap(),
        fs::read(b.join("prices.csv")).unwrap()
    );
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = run(&["solve", "--scenario", "builtin:sioux2", "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let mut first = Vec::new();
    for f in fs::read_dir(&out).unwrap() {
        let p = f.unwrap().path();
        first.push((p.clone(), fs::read(&p).unwrap()));
    }
    run(&["solve", "--scenario", "builtin:sioux2", "--out", path(&out)]);
    for (p, bytes) in first {
        assert_eq!(fs::read(&p).unwrap(), bytes, "{}", p.display());
    }
}

#[test]
fn validate_passes_on_builtins() {
    for id in ["builtin:5node", "builtin:sioux3"] {
        let o = run(&["validate", "--scenario", id, "--seed", "3"]);
        let text = stdout(&o);
        assert_eq!(o.status.code(), Some(0), "{text}");
        assert_eq!(
            text.lines().filter(|l| l.starts_with("PASS")).count(),
            5,
            "{text}"
        );
    }
}

#[test]
fn unreachable_replay_tolerance_fails_clearly() {
    let o = run(&["validate", "--scenario", "builtin:5node", "--replay-tol", "1e-30"]);
    assert_ne!(o.status.code(), Some(0));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.contains("replay")).unwrap();
    assert!(line.starts_with("FAIL") && line.contains("unreachable"), "{line}");
}

#[test]
fn seed_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let o = bin()
        .args(["validate", "--scenario", "builtin:5node", "--out", path(&a)])
        .env("MODAL_MARKET_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    run(&[
        "validate",
        "--scenario",
        "builtin:5node",
        "--seed",
        "42",
        "--out",
        path(&b),
    ]);
    let ma = fs::read(a.join("run_manifest.json")).unwrap();
    assert_eq!(ma, fs::read(b.join("run_manifest.json")).unwrap());
    let m: serde_json::Value = serde_json::from_slice(&ma).unwrap();
    assert_eq!(m["config"]["seed"], 42);
    assert_eq!(
        fs::read(a.join("validation.json")).unwrap(),
        fs::read(b.join("validation.json")).unwrap()
    );

    let bad = bin()
        .args(["validate", "--scenario", "builtin:5node"])
        .env("MODAL_MARKET_SEED", "abc")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "sweep",
        "--scenario",
        "builtin:5node",
        "--param",
        "traveler_params.beta2",
        "--values",
        "0.1,1,10",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("sweep_beta2.csv")).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(1) == Some("ok")));

    let bad = run(&[
        "sweep",
        "--scenario",
        "builtin:5node",
        "--param",
        "nothing.here",
        "--values",
        "1",
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn parallel_sweep_matches_serial() {
    let dir = tempfile::tempdir().unwrap();
    let values = "0.2,0.5,1,2,5";
    for (jobs, sub) in [("1", "serial"), ("3", "parallel")] {
        let out = dir.path().join(sub);
        let o = run(&[
            "sweep",
            "--scenario",
            "builtin:5node",
            "--param",
            "driver_params.beta3",
            "--values",
            values,
            "--jobs",
            jobs,
            "--out",
            path(&out),
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(
        fs::read(dir.path().join("serial/sweep_beta3.csv")).unwrap(),
        fs::read(dir.path().join("parallel/sweep_beta3.csv")).unwrap()
    );
}

#[test]
fn hub_study_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["hub-study", "--out", path(dir.path())]);
    assert_eq!(o.status.code(), Some(0));
    let text = fs::read_to_string(dir.path().join("hub_study.csv")).unwrap();
    let totals: Vec<f64> = text
        .lines()
        .filter(|l| l.split(',').nth(2) == Some("all"))
        .map(|l| l.split(',').nth(6).unwrap().parse().unwrap())
        .collect();
    assert_eq!(totals.len(), 3);
    assert!(totals[0] < totals[1] && totals[1] < totals[2], "{totals:?}");
}

#[test]
fn import_tntp_skeleton() {
    let dir = tempfile::tempdir().unwrap();
    let net = concat!(env!("CARGO_MANIFEST_DIR"), "/data/SiouxFalls_net.tntp");
    let out = dir.path().join("skeleton.json");
    let o = run(&["import-tntp", "--net", net, "--out", path(&out)]);
    assert_eq!(o.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(doc["network"]["nodes"].as_array().unwrap().len(), 24);
    assert_eq!(doc["network"]["links"].as_array().unwrap().len(), 76);
    assert_eq!(doc["ods"][0]["demand"], "REQUIRED");
    assert_eq!(doc["ods"][0]["hub"], "REQUIRED");
    assert!(dir.path().join("run_manifest.json").exists());
    // the skeleton is rejected until its placeholders are filled
    assert_eq!(run(&["solve", "--scenario", path(&out)]).status.code(), Some(2));
}
