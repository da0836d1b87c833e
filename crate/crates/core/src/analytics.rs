//! Metrics, parameter sweeps and the Sioux Falls hub comparison, with CSV
//! writers for each table.

use std::io::Write;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::equilibrium::{solve, EquilibriumError, EquilibriumSolution, SolveOptions};
use crate::netgraph::NodeId;
use crate::scenario::{builtin_sioux, from_value, to_value, Scenario, ScenarioError};

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("parameter path `{0}` does not address a number in the scenario")]
    UnknownParam(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Solve(#[from] EquilibriumError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OdMetrics {
    pub r: NodeId,
    pub s: NodeId,
    pub hub: NodeId,
    pub demand: f64,
    /// Drive, ride, multimodal.
    pub flows: [f64; 3],
    pub shares: [f64; 3],
    pub eta_direct: f64,
    pub eta_hub: f64,
    pub rho_direct: f64,
    pub rho_hub: f64,
    pub lambda_s: f64,
    pub lambda_h: f64,
    /// Some traveler or driver price of this OD is negative.
    pub subsidy: bool,
}

impl OdMetrics {
    pub fn label(&self) -> String {
        format!("{}-{}", self.r, self.s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeMetrics {
    pub node: NodeId,
    pub stock: f64,
    pub signout: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub ods: Vec<OdMetrics>,
    pub nodes: Vec<NodeMetrics>,
    /// Drive, ride, multimodal totals over all ODs.
    pub totals: [f64; 3],
    /// Flow-weighted relocation minutes of drivers heading to pick-ups.
    pub total_relocation_time: f64,
    /// Same as `total_relocation_time`: only times are known, not distances.
    pub empty_vmt_proxy: f64,
}

impl MetricsReport {
    pub fn od(&self, r: NodeId, s: NodeId) -> Option<&OdMetrics> {
        self.ods.iter().find(|o| o.r == r && o.s == s)
    }

    pub fn node(&self, node: NodeId) -> Option<&NodeMetrics> {
        self.nodes.iter().find(|n| n.node == node)
    }
}

pub fn metrics(sol: &EquilibriumSolution) -> MetricsReport {
    let mk = &sol.market;
    let m = mk.n_ods();
    let legs = mk.legs();
    let lam = sol.prices.lambda();
    let mut totals = [0.0; 3];
    let ods = (0..m)
        .map(|k| {
            let flows = sol.traveler.od(k);
            let demand = mk.demand[k];
            for c in 0..3 {
                totals[c] += flows[c];
            }
            let (direct, hub) = (&legs[k], &legs[m + k]);
            let eta_direct = sol.prices.eta_direct()[k];
            let eta_hub = sol.prices.eta_hub()[k];
            let rho_direct = sol.prices.rho_direct()[k];
            let rho_hub = sol.prices.rho_hub()[k];
            OdMetrics {
                r: direct.r,
                s: direct.dest,
                hub: hub.dest,
                demand,
                flows,
                shares: flows.map(|q| q / demand),
                eta_direct,
                eta_hub,
                rho_direct,
                rho_hub,
                lambda_s: lam[direct.dest_idx],
                lambda_h: lam[hub.dest_idx],
                subsidy: [eta_direct, eta_hub, rho_direct, rho_hub]
                    .iter()
                    .any(|&p| p < 0.0),
            }
        })
        .collect();
    let nodes = mk
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, &node)| NodeMetrics {
            node,
            stock: sol.driver.stocks()[i],
            signout: sol.driver.signout()[i],
            lambda: lam[i],
        })
        .collect();
    let t = relocation_time(sol);
    MetricsReport {
        ods,
        nodes,
        totals,
        total_relocation_time: t,
        empty_vmt_proxy: t,
    }
}

/// `Σ_n Σ_j q^D_nj · t(n, origin of j)`; drivers already at the pick-up
/// zone contribute nothing.
pub fn relocation_time(sol: &EquilibriumSolution) -> f64 {
    let mk = &sol.market;
    let mut total = 0.0;
    for i in 0..mk.n_nodes() {
        for j in 0..mk.n_legs() {
            total += sol.driver.flow(i, j) * mk.leg_time(i, j);
        }
    }
    total
}

/// Copy of `sc` with the number at `path` replaced. Paths are dot
/// separated field names as in the scenario file, with array indices for
/// lists: `traveler_params.beta2`, `ods.0.demand`, `signin.5`.
pub fn with_param(sc: &Scenario, path: &str, value: f64) -> Result<Scenario, AnalyticsError> {
    let unknown = || AnalyticsError::UnknownParam(path.to_string());
    let mut doc = to_value(sc);
    let mut slot = &mut doc;
    for key in path.split('.') {
        slot = match slot {
            Value::Object(map) => map.get_mut(key),
            Value::Array(items) => key.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(unknown)?;
    }
    if !slot.is_number() {
        return Err(unknown());
    }
    *slot = serde_json::Number::from_f64(value)
        .map(Value::Number)
        .ok_or_else(unknown)?;
    Ok(from_value(&doc)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub value: f64,
    pub iterations: Option<usize>,
    pub residual: Option<f64>,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
}

impl SweepCell {
    pub fn converged(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub param: String,
    pub cells: Vec<SweepCell>,
}

fn sweep_cell(sc: &Scenario, path: &str, value: f64, opts: &SolveOptions) -> SweepCell {
    let outcome = with_param(sc, path, value).and_then(|s| Ok(solve(&s, opts)?));
    match outcome {
        Ok(sol) => SweepCell {
            value,
            iterations: Some(sol.iterations),
            residual: Some(sol.residual.inf_norm),
            metrics: Some(metrics(&sol)),
            error: None,
        },
        Err(e) => SweepCell {
            value,
            iterations: None,
            residual: None,
            metrics: None,
            error: Some(e.to_string()),
        },
    }
}

/// One independent solve per value; a failing cell is recorded and the sweep
/// goes on. The parameter path is checked once up front.
pub fn sweep(
    sc: &Scenario,
    path: &str,
    values: &[f64],
    opts: &SolveOptions,
    jobs: usize,
) -> Result<SweepTable, AnalyticsError> {
    to_value(sc)
        .pointer(&format!("/{}", path.replace('.', "/")))
        .filter(|v| v.is_number())
        .ok_or_else(|| AnalyticsError::UnknownParam(path.to_string()))?;
    let jobs = jobs.clamp(1, values.len().max(1));
    if jobs == 1 {
        return Ok(SweepTable {
            param: path.to_string(),
            cells: values.iter().map(|&v| sweep_cell(sc, path, v, opts)).collect(),
        });
    }
    let mut cells: Vec<Option<SweepCell>> = vec![None; values.len()];
    std::thread::scope(|scope| {
        for (w, chunk) in cells.chunks_mut(values.len().div_ceil(jobs).max(1)).enumerate() {
            let start = w * values.len().div_ceil(jobs);
            scope.spawn(move || {
                for (k, cell) in chunk.iter_mut().enumerate() {
                    *cell = Some(sweep_cell(sc, path, values[start + k], opts));
                }
            });
        }
    });
    Ok(SweepTable {
        param: path.to_string(),
        cells: cells.into_iter().map(|c| c.expect("every cell solved")).collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct HubRow {
    pub scenario: String,
    pub hub_count: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct HubStudy {
    pub rows: Vec<HubRow>,
    pub multimodal_increasing: bool,
    pub drive_decreasing: bool,
    pub relocation_increasing: bool,
    /// ODs whose multimodal flow rises with every added hub layout.
    pub ods_multimodal_increasing: Vec<String>,
}

fn strictly(values: &[f64], up: bool) -> bool {
    values
        .windows(2)
        .all(|w| if up { w[1] > w[0] } else { w[1] < w[0] })
}

/// Sioux Falls under hub layouts 1, 2 and 3.
pub fn hub_study(opts: &SolveOptions) -> Result<HubStudy, AnalyticsError> {
    let mut rows = Vec::new();
    for k in 1..=3 {
        let sc = builtin_sioux(k)?;
        let sol = solve(&sc, opts)?;
        rows.push(HubRow {
            scenario: sc.name.clone(),
            hub_count: sc.hubs().len(),
            metrics: metrics(&sol),
        });
    }
    let series =
        |f: &dyn Fn(&MetricsReport) -> f64| -> Vec<f64> { rows.iter().map(|r| f(&r.metrics)).collect() };
    let ods_multimodal_increasing = rows[0]
        .metrics
        .ods
        .iter()
        .enumerate()
        .filter(|&(k, _)| strictly(&series(&|m| m.ods[k].flows[2]), true))
        .map(|(_, o)| o.label())
        .collect();
    Ok(HubStudy {
        multimodal_increasing: strictly(&series(&|m| m.totals[2]), true),
        drive_decreasing: strictly(&series(&|m| m.totals[0]), false),
        relocation_increasing: strictly(&series(&|m| m.total_relocation_time), true),
        ods_multimodal_increasing,
        rows,
    })
}

pub fn write_mode_shares<W: Write>(report: &MetricsReport, out: W) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["od", "drive", "ride", "multi"])?;
    for o in &report.ods {
        let [a, b, c] = o.shares;
        w.write_record([o.label(), a.to_string(), b.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_prices<W: Write>(report: &MetricsReport, out: W) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "od",
        "eta_direct",
        "eta_hub",
        "rho_direct",
        "rho_hub",
        "lambda_s",
        "lambda_h",
        "subsidy_flag",
    ])?;
    for o in &report.ods {
        w.write_record([
            o.label(),
            o.eta_direct.to_string(),
            o.eta_hub.to_string(),
            o.rho_direct.to_string(),
            o.rho_hub.to_string(),
            o.lambda_s.to_string(),
            o.lambda_h.to_string(),
            o.subsidy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_drivers<W: Write>(report: &MetricsReport, out: W) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "Q", "signout", "lambda"])?;
    for n in &report.nodes {
        w.write_record([
            n.node.to_string(),
            n.stock.to_string(),
            n.signout.to_string(),
            n.lambda.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per value. Per-OD columns follow the fixed ones, in OD order.
pub fn write_sweep<W: Write>(table: &SweepTable, out: W) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(out);
    let labels: Vec<String> = table
        .cells
        .iter()
        .find_map(|c| c.metrics.as_ref())
        .map(|m| m.ods.iter().map(OdMetrics::label).collect())
        .unwrap_or_default();
    let mut header: Vec<String> = [
        "value",
        "status",
        "iterations",
        "residual_inf",
        "drive",
        "ride",
        "multi",
        "total_relocation_time",
    ]
    .map(String::from)
    .to_vec();
    for l in &labels {
        for col in [
            "share_drive",
            "share_ride",
            "share_multi",
            "rho_direct",
            "rho_hub",
        ] {
            header.push(format!("{col}_{l}"));
        }
    }
    w.write_record(&header)?;
    for c in &table.cells {
        let mut row = vec![c.value.to_string()];
        match (&c.metrics, &c.error) {
            (Some(m), None) => {
                row.push("ok".into());
                row.push(c.iterations.map(|i| i.to_string()).unwrap_or_default());
                row.push(c.residual.map(|r| r.to_string()).unwrap_or_default());
                row.extend(m.totals.iter().map(f64::to_string));
                row.push(m.total_relocation_time.to_string());
                for o in &m.ods {
                    row.extend(o.shares.iter().map(f64::to_string));
                    row.push(o.rho_direct.to_string());
                    row.push(o.rho_hub.to_string());
                }
            }
            (_, err) => {
                row.push(format!("failed: {}", err.as_deref().unwrap_or("unknown")));
                row.resize(header.len(), String::new());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-OD rows for each scenario, then one `all` row per scenario with the
/// totals.
pub fn write_hub_study<W: Write>(study: &HubStudy, out: W) -> Result<(), AnalyticsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario",
        "hubs",
        "od",
        "hub",
        "drive",
        "ride",
        "multi",
        "eta_hub",
        "rho_hub",
        "total_relocation_time",
    ])?;
    for row in &study.rows {
        let m = &row.metrics;
        let t = m.total_relocation_time.to_string();
        for o in &m.ods {
            w.write_record([
                row.scenario.clone(),
                row.hub_count.to_string(),
                o.label(),
                o.hub.to_string(),
                o.flows[0].to_string(),
                o.flows[1].to_string(),
                o.flows[2].to_string(),
                o.eta_hub.to_string(),
                o.rho_hub.to_string(),
                t.clone(),
            ])?;
        }
        w.write_record([
            row.scenario.clone(),
            row.hub_count.to_string(),
            "all".into(),
            String::new(),
            m.totals[0].to_string(),
            m.totals[1].to_string(),
            m.totals[2].to_string(),
            String::new(),
            String::new(),
            t,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin_5node;

    fn five() -> EquilibriumSolution {
        solve(&builtin_5node(), &SolveOptions::default()).unwrap()
    }

    #[test]
    fn five_node_ordering_and_shares() {
        let rep = metrics(&five());
        for o in &rep.ods {
            let [d, r, mm] = o.shares;
            assert!(r > d && d > mm, "{o:?}");
            assert!((d + r + mm - 1.0).abs() <= 1e-12);
            assert!(o.rho_hub < o.rho_direct);
        }
        assert!(rep.total_relocation_time >= 0.0);
        assert_eq!(rep.empty_vmt_proxy, rep.total_relocation_time);
        assert!((rep.node(5).unwrap().stock - 20.0).abs() <= 1e-8);
    }

    #[test]
    fn relocation_matches_brute_force() {
        let sol = five();
        let sc = builtin_5node();
        let times = sc.relocation_matrix();
        let nodes = sc.network.nodes().to_vec();
        let n = nodes.len();
        let mut brute = 0.0;
        for (i, _) in nodes.iter().enumerate() {
            for (j, leg) in sol.market.legs().iter().enumerate() {
                let r = nodes.iter().position(|&x| x == leg.r).unwrap();
                brute += sol.driver.flow(i, j) * times[i * n + r];
            }
        }
        assert_eq!(relocation_time(&sol), brute);
    }

    #[test]
    fn staying_drivers_cost_nothing() {
        let sol = five();
        let mk = &sol.market;
        let l = mk.n_legs();
        let n = mk.n_nodes();
        // move every driver onto a leg starting at its own node, if any
        let mut q = vec![0.0; n * l];
        for i in 0..n {
            if let Some(j) = mk.legs().iter().position(|leg| leg.r_idx == i) {
                q[i * l + j] = 1.0;
            }
        }
        let local = crate::choice::DriverFlows::from_parts(l, q, vec![0.0; n], vec![1.0; n]);
        let staying = EquilibriumSolution { driver: local, ..sol };
        assert_eq!(relocation_time(&staying), 0.0);
    }

    #[test]
    fn metrics_are_reproducible() {
        let a = metrics(&five());
        let b = metrics(&five());
        assert_eq!(a, b);
    }

    #[test]
    fn param_paths() {
        let sc = builtin_5node();
        let s = with_param(&sc, "traveler_params.beta2", 0.5).unwrap();
        assert_eq!(s.traveler.beta2, 0.5);
        let s = with_param(&sc, "ods.1.demand", 70.0).unwrap();
        assert_eq!(s.ods[1].demand, 70.0);
        assert!(matches!(
            with_param(&sc, "traveler_params.nope", 1.0),
            Err(AnalyticsError::UnknownParam(_))
        ));
        assert!(matches!(
            with_param(&sc, "traveler_params", 1.0),
            Err(AnalyticsError::UnknownParam(_))
        ));
    }

    #[test]
    fn sweep_records_failures_per_cell() {
        let t = sweep(
            &builtin_5node(),
            "traveler_params.beta2",
            &[1.0, -1.0, 10.0],
            &SolveOptions::default(),
            2,
        )
        .unwrap();
        assert_eq!(t.cells.len(), 3);
        assert!(t.cells[0].converged() && t.cells[2].converged());
        assert!(!t.cells[1].converged());
        let mut buf = Vec::new();
        write_sweep(&t, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }

    #[test]
    fn single_value_sweep_is_plain_solve() {
        let t = sweep(
            &builtin_5node(),
            "traveler_params.beta2",
            &[1.0],
            &SolveOptions::default(),
            1,
        )
        .unwrap();
        assert_eq!(t.cells[0].metrics.as_ref().unwrap(), &metrics(&five()));
    }

    #[test]
    fn sweep_rejects_bad_path() {
        assert!(sweep(&builtin_5node(), "x.y", &[1.0], &SolveOptions::default(), 1).is_err());
    }

    #[test]
    fn csv_columns() {
        let rep = metrics(&five());
        let mut buf = Vec::new();
        write_prices(&rep, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("od,eta_direct,eta_hub,rho_direct,rho_hub,lambda_s,lambda_h,subsidy_flag\n"));
        let mut buf = Vec::new();
        write_drivers(&rep, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 6);
        let mut buf = Vec::new();
        write_mode_shares(&rep, &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("od,drive,ride,multi\n1-2,"));
    }
}
