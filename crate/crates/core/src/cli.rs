//! Command-line front end. Exit codes: 0 success, 2 bad input, 3 no
//! convergence or a failed check.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::analytics::{self, metrics, AnalyticsError, MetricsReport};
use crate::equilibrium::{
    respond, solve_market, uniqueness_probe, EquilibriumError, EquilibriumSolution, ResidualReport,
    SolveOptions,
};
use crate::netgraph::parse_tntp;
use crate::oracle::{kkt_check_solution, logit_replay, perturbation_probe};
use crate::scenario::{self, to_value, Market, Scenario, ScenarioError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

pub const SEED_ENV: &str = "MODAL_MARKET_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "modal-market",
    version,
    about = "Multimodal ride-sourcing market equilibrium"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a scenario and write solution and metrics.
    Solve(SolveArgs),
    /// Solve and run every independent check.
    Validate(ValidateArgs),
    /// Solve once per value of one scenario parameter.
    Sweep(SweepArgs),
    /// Compare the three Sioux Falls hub layouts.
    HubStudy(HubStudyArgs),
    /// Turn a TNTP network file into a scenario skeleton.
    ImportTntp(ImportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Residual inf-norm tolerance.
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
}

impl SolverArgs {
    fn options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            y0: None,
        }
    }

    fn manifest(&self) -> Value {
        json!({ "tol": self.tol, "max_iter": self.max_iter })
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Scenario file, or `builtin:5node`, `builtin:sioux1`, `builtin:sioux2`, `builtin:sioux3`.
    #[arg(long)]
    pub scenario: String,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub scenario: String,
    #[arg(long, default_value_t = 1e-9)]
    pub replay_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub kkt_tol: f64,
    #[arg(long, default_value_t = 5)]
    pub uniqueness_starts: usize,
    /// Seed for random starts and perturbations; falls back to MODAL_MARKET_SEED.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Also write the check report and a run manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub scenario: String,
    /// Dot path of a number in the scenario file, e.g. `traveler_params.beta2`.
    #[arg(long)]
    pub param: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct HubStudyArgs {
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    #[arg(long)]
    pub net: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    NotConverged(String),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Write { .. } => EXIT_INPUT,
            CliError::NotConverged(_) => EXIT_NOT_CONVERGED,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Invalid(v) => CliError::Input(
                v.iter()
                    .map(|x| format!("invalid scenario: {x}"))
                    .collect::<Vec<_>>()
                    .join("\n"),
            ),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<AnalyticsError> for CliError {
    fn from(e: AnalyticsError) -> Self {
        match e {
            AnalyticsError::Solve(err) => solve_error(err),
            AnalyticsError::Scenario(err) => err.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

fn solve_error(e: EquilibriumError) -> CliError {
    match e {
        EquilibriumError::NotConverged { .. } => CliError::NotConverged(e.to_string()),
        EquilibriumError::ValidationFailed(v) => CliError::Input(
            v.iter()
                .map(|x| format!("invalid scenario: {x}"))
                .collect::<Vec<_>>()
                .join("\n"),
        ),
        other => CliError::NotConverged(other.to_string()),
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(stderr, "{text}")
            } else {
                write!(stdout, "{text}")
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Solve(a) => cmd_solve(a, stdout),
        Command::Validate(a) => cmd_validate(a, stdout),
        Command::Sweep(a) => cmd_sweep(a, stdout),
        Command::HubStudy(a) => cmd_hub_study(a, stdout),
        Command::ImportTntp(a) => cmd_import_tntp(a, stdout),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.code()
        }
    }
}

/// `builtin:<id>` or a path to a scenario file.
fn load_scenario(arg: &str) -> Result<Scenario, CliError> {
    if let Some(id) = arg.strip_prefix("builtin:") {
        return Ok(scenario::by_id(id)?);
    }
    let bytes = fs::read(arg).map_err(|e| CliError::Input(format!("cannot read {arg}: {e}")))?;
    Ok(scenario::load(&bytes)?)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })
}

/// Writes one artifact and records its name.
struct Artifacts {
    dir: PathBuf,
    written: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self, CliError> {
        create_dir(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn bytes(&mut self, name: &str, data: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, data).map_err(|source| CliError::Write { path, source })?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).expect("values serialize");
        text.push('\n');
        self.bytes(name, text.as_bytes())
    }

    fn csv(
        &mut self,
        name: &str,
        write: impl FnOnce(&mut Vec<u8>) -> Result<(), AnalyticsError>,
    ) -> Result<(), CliError> {
        let mut buf = Vec::new();
        write(&mut buf)?;
        self.bytes(name, &buf)
    }

    /// Resolved configuration and tool version; no clock values, so reruns
    /// are byte-identical.
    fn manifest(mut self, command: &str, config: Value, exit_code: i32) -> Result<(), CliError> {
        let mut outputs = self.written.clone();
        outputs.sort();
        let manifest = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config": config,
            "outputs": outputs,
            "exit_code": exit_code,
        });
        self.json("run_manifest.json", &manifest)
    }
}

fn residual_json(r: &ResidualReport) -> Value {
    json!({
        "rho_direct": r.rho_direct,
        "rho_hub": r.rho_hub,
        "lambda": r.lambda,
        "inf_norm": r.inf_norm,
    })
}

/// Solution document: duals, prices, flows and clearing gaps. Wall time is
/// printed, not stored.
pub fn solution_json(sol: &EquilibriumSolution, converged: bool) -> Value {
    let mk = &sol.market;
    let m = mk.n_ods();
    let legs = mk.legs();
    let travelers: Vec<Value> = (0..m)
        .map(|k| {
            let [drive, ride, multi] = sol.traveler.od(k);
            json!({
                "r": legs[k].r,
                "s": legs[k].dest,
                "hub": legs[m + k].dest,
                "drive": drive,
                "ride": ride,
                "multimodal": multi,
            })
        })
        .collect();
    let drivers: Vec<Value> = mk
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, &node)| {
            let legs: Vec<Value> = legs
                .iter()
                .enumerate()
                .map(|(j, leg)| json!({ "r": leg.r, "dest": leg.dest, "flow": sol.driver.flow(i, j) }))
                .collect();
            json!({
                "node": node,
                "stock": sol.driver.stocks()[i],
                "signout": sol.driver.signout()[i],
                "legs": legs,
            })
        })
        .collect();
    let lambda: Map<String, Value> = mk
        .nodes()
        .iter()
        .zip(sol.prices.lambda())
        .map(|(n, l)| (n.to_string(), json!(l)))
        .collect();
    json!({
        "converged": converged,
        "iterations": sol.iterations,
        "y": sol.y,
        "prices": {
            "rho_direct": sol.prices.rho_direct(),
            "rho_hub": sol.prices.rho_hub(),
            "eta_direct": sol.prices.eta_direct(),
            "eta_hub": sol.prices.eta_hub(),
            "lambda": lambda,
        },
        "travelers": travelers,
        "drivers": drivers,
        "residual": residual_json(&sol.residual),
        "residual_history": sol.residual_history,
    })
}

/// Solution assembled from the best iterate of a failed solve.
fn best_iterate(
    market: Market,
    y: Vec<f64>,
    iterations: usize,
    residual_history: Vec<f64>,
) -> Result<EquilibriumSolution, CliError> {
    let resp = respond(&market, &y).map_err(|e| CliError::NotConverged(e.to_string()))?;
    let (m, n) = (market.n_ods(), market.n_nodes());
    let r = &resp.residual;
    let residual = ResidualReport {
        rho_direct: r[..m].to_vec(),
        rho_hub: r[m..2 * m].to_vec(),
        lambda: r[2 * m..2 * m + n].to_vec(),
        inf_norm: r.iter().fold(0.0, |a: f64, v| a.max(v.abs())),
    };
    Ok(EquilibriumSolution {
        market,
        y,
        prices: resp.prices,
        traveler: resp.traveler,
        driver: resp.driver,
        residual,
        iterations,
        wall_time: Default::default(),
        residual_history,
        dual_history: Vec::new(),
        steps: Vec::new(),
    })
}

fn write_solution(
    art: &mut Artifacts,
    sol: &EquilibriumSolution,
    converged: bool,
    format: Format,
) -> Result<MetricsReport, CliError> {
    let rep = metrics(sol);
    art.json("solution.json", &solution_json(sol, converged))?;
    match format {
        Format::Csv => {
            art.csv("mode_shares.csv", |w| analytics::write_mode_shares(&rep, w))?;
            art.csv("prices.csv", |w| analytics::write_prices(&rep, w))?;
            art.csv("drivers.csv", |w| analytics::write_drivers(&rep, w))?;
        }
        Format::Json => {
            art.json(
                "metrics.json",
                &serde_json::to_value(&rep).expect("metrics serialize"),
            )?;
        }
    }
    Ok(rep)
}

fn cmd_solve(a: &SolveArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let sc = load_scenario(&a.scenario)?;
    let market = Market::new(&sc)?;
    let started = Instant::now();
    let (sol, converged) = match solve_market(market.clone(), &a.solver.options()) {
        Ok(sol) => (sol, true),
        Err(EquilibriumError::NotConverged {
            best_y,
            iterations,
            residual_history,
            ..
        }) => (best_iterate(market, best_y, iterations, residual_history)?, false),
        Err(e) => return Err(solve_error(e)),
    };
    let elapsed = started.elapsed();
    let mut art = Artifacts::new(&a.out)?;
    write_solution(&mut art, &sol, converged, a.format)?;
    let code = if converged { EXIT_OK } else { EXIT_NOT_CONVERGED };
    let config = json!({
        "scenario_source": a.scenario,
        "scenario": to_value(&sc),
        "solver": a.solver.manifest(),
        "format": a.format.name(),
        "out": a.out,
    });
    art.manifest("solve", config, code)?;
    let _ = writeln!(out, "scenario    {}", sc.name);
    let _ = writeln!(
        out,
        "status      {}",
        if converged {
            "converged"
        } else {
            "NOT CONVERGED (best iterate written)"
        }
    );
    let _ = writeln!(out, "residual    {:.3e}", sol.residual.inf_norm);
    let _ = writeln!(out, "iterations  {}", sol.iterations);
    let _ = writeln!(out, "wall time   {:.3} ms", elapsed.as_secs_f64() * 1e3);
    Ok(code)
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Input(format!("{SEED_ENV}={v} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn cmd_validate(a: &ValidateArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let seed = resolve_seed(a.seed)?;
    let sc = load_scenario(&a.scenario)?;
    let market = Market::new(&sc)?;
    let sol = solve_market(market, &a.solver.options()).map_err(solve_error)?;
    let mut checks = vec![Check {
        name: "clearing",
        pass: sol.residual.inf_norm <= a.solver.tol,
        detail: format!(
            "residual {:.3e} after {} iterations",
            sol.residual.inf_norm, sol.iterations
        ),
    }];

    let replay = logit_replay(&sol).map_err(|e| CliError::NotConverged(e.to_string()))?;
    checks.push(if a.replay_tol < f64::EPSILON {
        Check {
            name: "replay",
            pass: false,
            detail: format!(
                "tolerance {:e} is unreachable below double precision ({:e}); measured {:.3e}",
                a.replay_tol,
                f64::EPSILON,
                replay.worst()
            ),
        }
    } else {
        Check {
            name: "replay",
            pass: replay.worst() <= a.replay_tol,
            detail: format!(
                "traveler {:.3e}, driver {:.3e} (tol {:e})",
                replay.traveler, replay.driver, a.replay_tol
            ),
        }
    });

    checks.push(match kkt_check_solution(&sol) {
        Ok(k) => Check {
            name: "kkt",
            pass: k.stationarity <= a.kkt_tol,
            detail: format!(
                "stationarity {:.3e}, feasibility {:.3e} (tol {:e})",
                k.stationarity, k.constraint_violation, a.kkt_tol
            ),
        },
        Err(e) => Check {
            name: "kkt",
            pass: false,
            detail: e.to_string(),
        },
    });

    let gap = perturbation_probe(&sol, 100, seed);
    checks.push(Check {
        name: "convexity",
        pass: gap > 0.0,
        detail: format!("min objective gap {gap:.3e} over 100 perturbations"),
    });

    checks.push(match uniqueness_probe(&sc, a.uniqueness_starts, seed) {
        Ok(d) => Check {
            name: "uniqueness",
            pass: d <= 1e-6,
            detail: format!("max dual spread {d:.3e} over {} starts", a.uniqueness_starts),
        },
        Err(e) => Check {
            name: "uniqueness",
            pass: false,
            detail: e.to_string(),
        },
    });

    for c in &checks {
        let _ = writeln!(
            out,
            "{} {:<10} {}",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let all = checks.iter().all(|c| c.pass);
    let code = if all { EXIT_OK } else { EXIT_NOT_CONVERGED };
    if let Some(dir) = &a.out {
        let mut art = Artifacts::new(dir)?;
        let report: Vec<Value> = checks
            .iter()
            .map(|c| json!({ "check": c.name, "pass": c.pass, "detail": c.detail }))
            .collect();
        art.json("validation.json", &Value::Array(report))?;
        let config = json!({
            "scenario_source": a.scenario,
            "scenario": to_value(&sc),
            "solver": a.solver.manifest(),
            "replay_tol": a.replay_tol,
            "kkt_tol": a.kkt_tol,
            "uniqueness_starts": a.uniqueness_starts,
            "seed": seed,
        });
        art.manifest("validate", config, code)?;
    }
    Ok(code)
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let sc = load_scenario(&a.scenario)?;
    let table = analytics::sweep(&sc, &a.param, &a.values, &a.solver.options(), a.jobs)?;
    let short = a.param.rsplit('.').next().unwrap_or(&a.param);
    let mut art = Artifacts::new(&a.out)?;
    art.csv(&format!("sweep_{short}.csv"), |w| {
        analytics::write_sweep(&table, w)
    })?;
    if a.format == Format::Json {
        art.json(
            &format!("sweep_{short}.json"),
            &serde_json::to_value(&table).expect("serialize"),
        )?;
    }
    let failed = table.cells.iter().filter(|c| !c.converged()).count();
    for c in &table.cells {
        match (&c.metrics, &c.error) {
            (Some(m), _) => {
                let [d, r, mm] = m.totals;
                let _ = writeln!(
                    out,
                    "{} = {}: drive {d:.4} ride {r:.4} multimodal {mm:.4}",
                    a.param, c.value
                );
            }
            (None, e) => {
                let _ = writeln!(
                    out,
                    "{} = {}: failed: {}",
                    a.param,
                    c.value,
                    e.as_deref().unwrap_or("")
                );
            }
        }
    }
    let code = if failed == 0 { EXIT_OK } else { EXIT_NOT_CONVERGED };
    let config = json!({
        "scenario_source": a.scenario,
        "scenario": to_value(&sc),
        "param": a.param,
        "values": a.values,
        "solver": a.solver.manifest(),
        "format": a.format.name(),
        "jobs": a.jobs,
    });
    art.manifest("sweep", config, code)?;
    Ok(code)
}

fn cmd_hub_study(a: &HubStudyArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let study = analytics::hub_study(&a.solver.options())?;
    let mut art = Artifacts::new(&a.out)?;
    art.csv("hub_study.csv", |w| analytics::write_hub_study(&study, w))?;
    if a.format == Format::Json {
        art.json(
            "hub_study.json",
            &serde_json::to_value(&study).expect("serialize"),
        )?;
    }
    for row in &study.rows {
        let m = &row.metrics;
        let _ = writeln!(
            out,
            "{} ({} hubs): drive {:.2} ride {:.2} multimodal {:.2} relocation {:.1}",
            row.scenario, row.hub_count, m.totals[0], m.totals[1], m.totals[2], m.total_relocation_time
        );
    }
    let yes = |b: bool| if b { "yes" } else { "no" };
    let _ = writeln!(out, "multimodal increasing: {}", yes(study.multimodal_increasing));
    let _ = writeln!(out, "driving decreasing:    {}", yes(study.drive_decreasing));
    let _ = writeln!(out, "relocation increasing: {}", yes(study.relocation_increasing));
    let config = json!({ "solver": a.solver.manifest(), "format": a.format.name() });
    art.manifest("hub-study", config, EXIT_OK)?;
    Ok(EXIT_OK)
}

/// Placeholder written into fields the network file cannot supply.
pub const REQUIRED: &str = "REQUIRED";

fn cmd_import_tntp(a: &ImportArgs, out: &mut dyn Write) -> Result<i32, CliError> {
    let bytes =
        fs::read(&a.net).map_err(|e| CliError::Input(format!("cannot read {}: {e}", a.net.display())))?;
    let net = parse_tntp(bytes.as_slice()).map_err(|e| CliError::Input(e.to_string()))?;
    let defaults = scenario::builtin_5node();
    let name = a
        .net
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "imported".into());
    let sc = Scenario {
        name,
        signin: net.nodes().iter().map(|&n| (n, defaults.signin_at(5))).collect(),
        network: net,
        ods: defaults.ods[..1].to_vec(),
        ..defaults
    };
    let mut doc = to_value(&sc);
    let od: Map<String, Value> = doc["ods"][0]
        .as_object()
        .expect("ods serialize as objects")
        .keys()
        .map(|k| (k.clone(), json!(REQUIRED)))
        .collect();
    doc["ods"] = json!([od]);
    let mut text = serde_json::to_string_pretty(&doc).expect("serialize");
    text.push('\n');
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(&a.out, text).map_err(|source| CliError::Write {
        path: a.out.clone(),
        source,
    })?;
    let _ = writeln!(
        out,
        "{} nodes, {} links; fill every \"{REQUIRED}\" field of ods before solving",
        sc.network.nodes().len(),
        sc.network.links().len()
    );
    let dir = a
        .out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut art = Artifacts::new(dir)?;
    art.written.push(
        a.out
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    );
    let config = json!({ "net": a.net, "out": a.out });
    art.manifest("import-tntp", config, EXIT_OK)?;
    Ok(EXIT_OK)
}
