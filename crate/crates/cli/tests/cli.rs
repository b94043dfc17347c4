use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mvlogit_cli::{load_dataset_csv, AnalysisConfig};
use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn mvlogit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvlogit")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) {
    let out = mvlogit(args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn toy_csv_loads_with_two_outcomes() {
    let config: AnalysisConfig =
        serde_json::from_str(r#"{"outcomes":["y1","y2"],"treatment":"treat","covariates":["z"]}"#).unwrap();
    let loaded = load_dataset_csv(&fixture("toy.csv"), &config).unwrap();
    assert_eq!(loaded.data.len(), 6);
    assert_eq!(loaded.data.outcomes().k(), 2);
    assert_eq!(loaded.data.arm_counts(), [3, 3]);
}

#[test]
fn non_binary_outcome_is_reported_with_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let csv = std::fs::read_to_string(fixture("toy.csv")).unwrap().replace("0,1,1,1.1", "0,2,1,1.1");
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, csv).unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"outcomes":["y1","y2"],"treatment":"treat","covariates":["z"]}"#).unwrap();
    let out = mvlogit(&["fit", "--config", s(&config), "--data", s(&data), "--out", s(dir.path())]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], "E_INGESTION");
    let msg = err["error"]["message"].as_str().unwrap();
    assert!(msg.contains("row 4") && msg.contains("'y2'"), "{msg}");
}

#[test]
fn malformed_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"outcomes":[],"treatment":"treat"}"#).unwrap();
    let out = mvlogit(&["fit", "--config", s(&config), "--data", s(&fixture("toy.csv")), "--out", s(dir.path())]);
    assert!(!out.status.success());
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], "E_CONFIG");
}

#[test]
fn plan_reports_303_for_the_worked_case() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["plan", "--config", s(&fixture("plan_compensatory.json")), "--out", s(dir.path())]);
    let plan = read_json(&dir.path().join("plan.json"));
    assert_eq!(plan["n_per_arm"], 303);
    assert_eq!(plan["method"], "closed-form");
    assert!(dir.path().join("meta.json").exists());
}

#[test]
fn elicit_reports_the_prior_mean_table() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&["elicit", "--config", s(&fixture("beliefs.json")), "--out", s(dir.path())]);
    let report = read_json(&dir.path().join("prior_means.json"));
    let expected = [
        [0.000, 0.000, 1.902, -3.804],
        [0.766, 0.000, 0.781, -1.562],
        [0.766, 0.000, 1.121, -2.241],
    ];
    for (q, row) in expected.iter().enumerate() {
        for (p, v) in row.iter().enumerate() {
            let got = report["means"][q][p].as_f64().unwrap();
            assert!((got - v).abs() < 5e-4, "q={q} p={p}: {got}");
        }
    }
    let csv = std::fs::read_to_string(dir.path().join("prior_means.csv")).unwrap();
    assert!(csv.starts_with("category,intercept,T,z,z:T\n11,"));
}

#[test]
fn weighted_two_sided_decision_on_ist_style_data() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(&[
        "decide",
        "--config",
        s(&fixture("ist_config.json")),
        "--data",
        s(&fixture("ist_subset.csv")),
        "--seed",
        "5",
        "--out",
        s(dir.path()),
    ]);
    let report = read_json(&dir.path().join("decision.json"));
    let std = &report["data"]["standardization"][0];
    assert_eq!(std["column"], "rsbp");
    assert!(std["sd"].as_f64().unwrap() > 0.0);
    assert_eq!(report["sidedness"], "two-sided");
    let pops = report["populations"].as_array().unwrap();
    assert_eq!(pops.len(), 3);
    for pop in pops {
        for d in pop["decisions"].as_array().unwrap() {
            let verdict = d["verdict"].as_str().unwrap();
            assert!(["superior", "inferior", "inconclusive", "conflicting"].contains(&verdict));
            if d["rule"] == "compensatory/failure" {
                assert_eq!(d["definition"]["weights"], serde_json::json!([0.25, 0.75]));
                assert!((d["p_cut"].as_f64().unwrap() - 0.975).abs() < 1e-12);
                assert!(verdict != "conflicting");
            }
            if d["rule"] == "any/failure" {
                assert!((d["p_cut"].as_f64().unwrap() - 0.9875).abs() < 1e-12);
            }
        }
    }
    let decisions = std::fs::read_to_string(dir.path().join("decisions.csv")).unwrap();
    assert_eq!(decisions.lines().count(), 1 + 3 * 3);
}

#[test]
fn fit_then_decide_matches_a_single_decide() {
    let one = tempfile::tempdir().unwrap();
    let two = tempfile::tempdir().unwrap();
    let (config, data) = (fixture("ist_config.json"), fixture("ist_subset.csv"));
    let common = ["--config", s(&config), "--data", s(&data), "--seed", "21"];
    let with = |cmd: &str, dir: &Path, extra: &[&str]| {
        let mut args = vec![cmd];
        args.extend(common);
        args.extend(["--out", s(dir)]);
        args.extend(extra);
        run_ok(&args);
    };
    with("decide", one.path(), &[]);
    with("fit", two.path(), &[]);
    let draws = two.path().join("draws.csv");
    with("decide", two.path(), &["--draws", s(&draws)]);
    for f in ["decision.json", "effects.csv", "decisions.csv"] {
        let a = std::fs::read(one.path().join(f)).unwrap();
        let b = std::fs::read(two.path().join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn equal_seeds_give_identical_payloads() {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (dir, seed) in dirs.iter().zip(["8", "8", "9"]) {
        run_ok(&[
            "fit",
            "--config",
            s(&fixture("ist_config.json")),
            "--data",
            s(&fixture("ist_subset.csv")),
            "--seed",
            seed,
            "--out",
            s(dir.path()),
        ]);
    }
    let read = |i: usize, f: &str| std::fs::read(dirs[i].path().join(f)).unwrap();
    assert_eq!(read(0, "draws.csv"), read(1, "draws.csv"));
    assert_eq!(read(0, "fit.json"), read(1, "fit.json"));
    assert_ne!(read(0, "draws.csv"), read(2, "draws.csv"));
    let meta = read_json(&dirs[0].path().join("meta.json"));
    assert_eq!(meta["command"], "fit");
    assert!(meta["created_unix"].as_u64().is_some());
}

#[test]
fn simulate_campaign_is_reproducible() {
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &dirs {
        run_ok(&["simulate", "--config", s(&fixture("campaign.json")), "--out", s(dir.path())]);
    }
    let a = std::fs::read(dirs[0].path().join("simulation.json")).unwrap();
    assert_eq!(a, std::fs::read(dirs[1].path().join("simulation.json")).unwrap());
    let csv = std::fs::read_to_string(dirs[0].path().join("simulation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let result = read_json(&dirs[0].path().join("simulation.json"));
    assert_eq!(result[0]["replications"], 4);
}
