use modal_market_web::{hub_study_json, solve_json, sweep_json};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn solve_returns_metrics() {
    let doc = parse(&solve_json("5node", 1.0, 1.0).unwrap());
    assert!(doc["residual"].as_f64().unwrap() <= 1e-10);
    let ods = doc["metrics"]["ods"].as_array().unwrap();
    assert_eq!(ods.len(), 2);
    let shares: f64 = ods[0]["shares"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .sum();
    assert!((shares - 1.0).abs() <= 1e-12);
}

#[test]
fn bad_input_is_an_error_string() {
    assert!(solve_json("nowhere", 1.0, 1.0).unwrap_err().contains("nowhere"));
    assert!(solve_json("5node", -1.0, 1.0).is_err());
}

#[test]
fn sweep_rows_follow_values() {
    let rows = parse(&sweep_json("5node", &[0.1, 1.0, 10.0], 1.0).unwrap());
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    let drive = |k: usize| rows[k]["totals"][0].as_f64().unwrap();
    assert!(drive(0) > drive(1) && drive(1) > drive(2));
    let failed = parse(&sweep_json("5node", &[0.0], 1.0).unwrap());
    assert!(failed[0]["error"].is_string());
}

#[test]
fn hub_study_has_three_rows() {
    let doc = parse(&hub_study_json().unwrap());
    assert_eq!(doc["rows"].as_array().unwrap().len(), 3);
    assert_eq!(doc["multimodal_increasing"], true);
}
