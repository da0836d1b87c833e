//! Browser bindings for the equilibrium solver. Every export takes plain
//! numbers or strings and returns a JSON document, so the page needs no glue
//! beyond `JSON.parse`.

use modal_market::analytics::{hub_study, metrics, sweep};
use modal_market::equilibrium::{solve, SolveOptions};
use modal_market::scenario::{by_id, Scenario};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn scenario(id: &str, beta2: f64, beta3: f64) -> Result<Scenario, String> {
    let mut sc = by_id(id).map_err(|e| e.to_string())?;
    sc.traveler.beta2 = beta2;
    sc.driver.beta3 = beta3;
    Ok(sc)
}

/// Solves a builtin scenario with the traveler price sensitivity `beta2`
/// and driver price sensitivity `beta3` replaced.
pub fn solve_json(id: &str, beta2: f64, beta3: f64) -> Result<String, String> {
    let sc = scenario(id, beta2, beta3)?;
    let sol = solve(&sc, &SolveOptions::default()).map_err(|e| e.to_string())?;
    let doc = json!({
        "scenario": sc.name,
        "iterations": sol.iterations,
        "residual": sol.residual.inf_norm,
        "metrics": metrics(&sol),
    });
    Ok(doc.to_string())
}

/// Mode totals and driver prices for each traveler price sensitivity in
/// `values`. Cells that fail carry an `error` string instead.
pub fn sweep_json(id: &str, values: &[f64], beta3: f64) -> Result<String, String> {
    let sc = scenario(id, 1.0, beta3)?;
    let table = sweep(&sc, "traveler_params.beta2", values, &SolveOptions::default(), 1)
        .map_err(|e| e.to_string())?;
    let rows: Vec<Value> = table
        .cells
        .iter()
        .map(|c| match &c.metrics {
            Some(m) => json!({
                "beta2": c.value,
                "totals": m.totals,
                "rho_direct": m.ods.iter().map(|o| o.rho_direct).collect::<Vec<_>>(),
                "rho_hub": m.ods.iter().map(|o| o.rho_hub).collect::<Vec<_>>(),
            }),
            None => json!({ "beta2": c.value, "error": c.error }),
        })
        .collect();
    Ok(Value::Array(rows).to_string())
}

/// Totals per Sioux Falls hub layout with the monotonicity verdicts.
pub fn hub_study_json() -> Result<String, String> {
    let study = hub_study(&SolveOptions::default()).map_err(|e| e.to_string())?;
    let rows: Vec<Value> = study
        .rows
        .iter()
        .map(|r| {
            json!({
                "scenario": r.scenario,
                "hubs": r.hub_count,
                "totals": r.metrics.totals,
                "relocation": r.metrics.total_relocation_time,
                "subsidized": r.metrics.ods.iter().filter(|o| o.eta_hub < 0.0).count(),
            })
        })
        .collect();
    Ok(json!({
        "rows": rows,
        "multimodal_increasing": study.multimodal_increasing,
        "drive_decreasing": study.drive_decreasing,
        "relocation_increasing": study.relocation_increasing,
    })
    .to_string())
}

#[wasm_bindgen(js_name = solveScenario)]
pub fn solve_scenario(id: &str, beta2: f64, beta3: f64) -> Result<String, JsValue> {
    solve_json(id, beta2, beta3).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = sweepBeta2)]
pub fn sweep_beta2(id: &str, values: Vec<f64>, beta3: f64) -> Result<String, JsValue> {
    sweep_json(id, &values, beta3).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = hubStudy)]
pub fn hub_study_js() -> Result<String, JsValue> {
    hub_study_json().map_err(|e| JsValue::from_str(&e))
}
