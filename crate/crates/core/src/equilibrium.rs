//! Market equilibrium through the dual of the joint convex program.
//!
//! The duals `y = [ρ_direct, ρ_hub, λ]` price every service leg and every
//! node's driver stock. Given `y`, both agent populations respond in closed
//! form, and the clearing gaps form a residual map that is the gradient of a
//! smooth convex dual function. The solver is a damped Newton method on that
//! map.

use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::choice::{
    arrivals, driver_flows_dual, log_sum_exp, od_utilities, traveler_flows, ChoiceError, DriverFlows,
    PriceSystem, TravelerFlows,
};
use crate::scenario::{Market, Scenario, ScenarioError, Violation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EquilibriumError {
    #[error("scenario is invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    ValidationFailed(Vec<Violation>),
    #[error("no convergence after {iterations} iterations (best residual {best_inf_norm:.3e})")]
    NotConverged {
        best_y: Vec<f64>,
        best_inf_norm: f64,
        residual_history: Vec<f64>,
        iterations: usize,
    },
    #[error(transparent)]
    Choice(#[from] ChoiceError),
    #[error("{0} requires strictly positive flows")]
    NonPositiveFlow(&'static str),
}

impl From<ScenarioError> for EquilibriumError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Invalid(v) => Self::ValidationFailed(v),
            other => Self::ValidationFailed(vec![Violation {
                path: String::new(),
                message: other.to_string(),
            }]),
        }
    }
}

/// Clearing gaps at a dual point: served minus requested rides per leg, and
/// stock minus arrivals and sign-ins per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    pub rho_direct: Vec<f64>,
    pub rho_hub: Vec<f64>,
    pub lambda: Vec<f64>,
    pub inf_norm: f64,
}

impl ResidualReport {
    fn from_vec(m: usize, r: &[f64]) -> Self {
        Self {
            rho_direct: r[..m].to_vec(),
            rho_hub: r[m..2 * m].to_vec(),
            lambda: r[2 * m..].to_vec(),
            inf_norm: inf_norm(r),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        [&self.rho_direct[..], &self.rho_hub, &self.lambda].concat()
    }

    pub fn dim(&self) -> usize {
        self.rho_direct.len() + self.rho_hub.len() + self.lambda.len()
    }
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn two_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Everything the agents do at one dual point.
#[derive(Debug, Clone)]
pub(crate) struct Response {
    pub prices: PriceSystem,
    pub traveler: TravelerFlows,
    pub driver: DriverFlows,
    pub residual: Vec<f64>,
}

pub(crate) fn respond(market: &Market, y: &[f64]) -> Result<Response, ChoiceError> {
    let prices = PriceSystem::from_duals(market, y)?;
    let traveler = traveler_flows(market, &prices);
    let driver = driver_flows_dual(market, &prices)?;
    let m = market.n_ods();
    let mut r = Vec::with_capacity(market.dim());
    for j in 0..market.n_legs() {
        let mode = if j < m { 1 } else { 2 };
        r.push(driver.served(j) - traveler.od(j % m)[mode]);
    }
    let arr = arrivals(market, &traveler);
    for i in 0..market.n_nodes() {
        r.push(driver.stocks()[i] - arr[i] - market.signin[i]);
    }
    Ok(Response {
        prices,
        traveler,
        driver,
        residual: r,
    })
}

pub fn residual(market: &Market, y: &[f64]) -> Result<ResidualReport, ChoiceError> {
    let resp = respond(market, y)?;
    Ok(ResidualReport::from_vec(market.n_ods(), &resp.residual))
}

/// Convex dual function whose gradient is the residual map.
pub fn dual_function(market: &Market, y: &[f64]) -> Result<f64, ChoiceError> {
    Ok(dual_value(market, &respond(market, y)?))
}

fn dual_value(market: &Market, resp: &Response) -> f64 {
    let (b2, b3) = (market.beta2, market.beta3);
    let drivers: f64 = resp.driver.stocks().iter().sum();
    let travelers: f64 = (0..market.n_ods())
        .map(|k| market.demand[k] * log_sum_exp(&od_utilities(market, k, &resp.prices)))
        .sum();
    let signin: f64 = resp
        .prices
        .lambda()
        .iter()
        .zip(&market.signin)
        .map(|(l, s)| l * s)
        .sum();
    drivers / b3 + travelers / b2 - signin
}

/// Jacobian of the residual map, assembled from the closed-form derivatives
/// of the exponential and softmax responses. It is symmetric positive
/// semidefinite.
pub fn jacobian(market: &Market, y: &[f64]) -> Result<DMatrix<f64>, ChoiceError> {
    let resp = respond(market, y)?;
    Ok(assemble_jacobian(market, &resp))
}

fn assemble_jacobian(market: &Market, resp: &Response) -> DMatrix<f64> {
    let (l, m) = (market.n_legs(), market.n_ods());
    let dim = market.dim();
    let b3 = market.beta3;
    let mut jac = DMatrix::zeros(dim, dim);
    for i in 0..market.n_nodes() {
        let li = l + i;
        for j in 0..l {
            let w = b3 * resp.driver.flow(i, j);
            jac[(j, j)] += w;
            jac[(j, li)] += w;
            jac[(li, j)] += w;
            jac[(li, li)] += w;
        }
        jac[(li, li)] += b3 * resp.driver.signout()[i];
    }
    let legs = market.legs();
    for k in 0..m {
        let q = resp.traveler.od(k);
        let d = market.demand[k];
        let p = [q[1] / d, q[2] / d];
        let rows = [[k, l + legs[k].dest_idx], [m + k, l + legs[m + k].dest_idx]];
        for a in 0..2 {
            for b in 0..2 {
                let delta = if a == b { 1.0 } else { 0.0 };
                let w = market.beta2 * d * p[a] * (delta - p[b]);
                for &ra in &rows[a] {
                    for &rb in &rows[b] {
                        jac[(ra, rb)] += w;
                    }
                }
            }
        }
    }
    jac
}

/// Forward-difference Jacobian with step `1e-7·max(1, |y_i|)`.
#[cfg(any(feature = "fd-jacobian", test))]
pub fn jacobian_fd(market: &Market, y: &[f64]) -> Result<DMatrix<f64>, ChoiceError> {
    let base = respond(market, y)?.residual;
    let dim = y.len();
    let mut jac = DMatrix::zeros(dim, dim);
    let mut yy = y.to_vec();
    for c in 0..dim {
        let h = 1e-7 * y[c].abs().max(1.0);
        yy[c] = y[c] + h;
        let r = respond(market, &yy)?.residual;
        for row in 0..dim {
            jac[(row, c)] = (r[row] - base[row]) / h;
        }
        yy[c] = y[c];
    }
    Ok(jac)
}

fn newton_matrix(market: &Market, y: &[f64], resp: &Response) -> Result<DMatrix<f64>, ChoiceError> {
    #[cfg(feature = "fd-jacobian")]
    {
        let _ = resp;
        jacobian_fd(market, y)
    }
    #[cfg(not(feature = "fd-jacobian"))]
    {
        let _ = y;
        Ok(assemble_jacobian(market, resp))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Absolute inf-norm tolerance on the residual, in flow units.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting duals; zeros when absent.
    pub y0: Option<Vec<f64>>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
            y0: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    /// Damped Newton step.
    Newton,
    /// Scaled residual step `y - 0.1·r`.
    FixedPoint,
}

#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub market: Market,
    pub y: Vec<f64>,
    pub prices: PriceSystem,
    pub traveler: TravelerFlows,
    pub driver: DriverFlows,
    pub residual: ResidualReport,
    pub iterations: usize,
    pub wall_time: Duration,
    /// Residual 2-norm at the start and after every iteration.
    pub residual_history: Vec<f64>,
    /// Dual function value at the start and after every iteration.
    pub dual_history: Vec<f64>,
    pub steps: Vec<StepKind>,
}

#[cfg(not(target_arch = "wasm32"))]
fn stopwatch() -> impl Fn() -> Duration {
    let start = std::time::Instant::now();
    move || start.elapsed()
}

/// Bare wasm has no clock; timings read zero there.
#[cfg(target_arch = "wasm32")]
fn stopwatch() -> impl Fn() -> Duration {
    || Duration::ZERO
}

const MAX_HALVINGS: usize = 30;
const FIXED_POINT_STEP: f64 = 0.1;
const ARMIJO: f64 = 1e-4;
const MAX_EXPONENT_STEP: f64 = 10.0;
const ROUNDOFF_SLACK: f64 = 1e-14;

pub fn solve(sc: &Scenario, opts: &SolveOptions) -> Result<EquilibriumSolution, EquilibriumError> {
    let market = Market::new(sc)?;
    solve_market(market, opts)
}

fn newton_direction(jac: DMatrix<f64>, r: &[f64], cap: f64) -> Option<DVector<f64>> {
    let rhs = -DVector::from_column_slice(r);
    let step = jac.lu().solve(&rhs)?;
    step.iter().all(|x| x.is_finite()).then(|| capped(step, cap))
}

/// Shrinks `step` so that no dual moves by more than `cap`.
fn capped(step: DVector<f64>, cap: f64) -> DVector<f64> {
    let big = step.amax();
    if big > cap {
        step * (cap / big)
    } else {
        step
    }
}

/// Damped Newton on the residual map. Every candidate step is measured by the
/// convex dual function, of which the residual is the gradient: a step is
/// accepted on Armijo decrease (with a roundoff allowance) or when the
/// directional derivative at the trial point is still non-positive, which by
/// convexity guarantees descent without relying on cancelling differences.
/// When no halving succeeds the solver takes a scaled residual step instead.
pub fn solve_market(market: Market, opts: &SolveOptions) -> Result<EquilibriumSolution, EquilibriumError> {
    let elapsed = stopwatch();
    let mut y = match &opts.y0 {
        Some(y0) if y0.len() != market.dim() => {
            return Err(ChoiceError::DimensionMismatch {
                expected: market.dim(),
                found: y0.len(),
            }
            .into())
        }
        Some(y0) => y0.clone(),
        None => vec![0.0; market.dim()],
    };
    let mut resp = respond(&market, &y)?;
    let mut phi = dual_value(&market, &resp);
    let mut residual_history = vec![two_norm(&resp.residual)];
    let mut dual_history = vec![phi];
    let mut steps = Vec::new();
    let mut best = (inf_norm(&resp.residual), y.clone());

    // No dual may shift a logit exponent by more than MAX_EXPONENT_STEP in one
    // iteration; far from equilibrium the raw Newton step can be huge along
    // directions of vanishing curvature.
    let cap = MAX_EXPONENT_STEP / market.beta2.max(market.beta3);
    let mut iterations = 0;
    while inf_norm(&resp.residual) > opts.tol {
        if iterations == opts.max_iter {
            return Err(EquilibriumError::NotConverged {
                best_y: best.1,
                best_inf_norm: best.0,
                residual_history,
                iterations,
            });
        }
        iterations += 1;

        let mut accepted = None;
        if let Some(dir) = newton_direction(newton_matrix(&market, &y, &resp)?, &resp.residual, cap) {
            let slope = dot(&resp.residual, dir.as_slice());
            let slack = ROUNDOFF_SLACK * (1.0 + phi.abs());
            let mut alpha = 1.0;
            for _ in 0..=MAX_HALVINGS {
                if slope >= 0.0 {
                    break;
                }
                let trial: Vec<f64> = y.iter().zip(dir.iter()).map(|(a, d)| a + alpha * d).collect();
                if let Ok(next) = respond(&market, &trial) {
                    let phi_next = dual_value(&market, &next);
                    let armijo = phi_next <= phi + ARMIJO * alpha * slope + slack;
                    if armijo || dot(&next.residual, dir.as_slice()) <= 0.0 {
                        accepted = Some((trial, next, StepKind::Newton));
                        break;
                    }
                }
                alpha *= 0.5;
            }
        }
        if accepted.is_none() {
            let dir = capped(
                -FIXED_POINT_STEP * DVector::from_column_slice(&resp.residual),
                cap,
            );
            let mut alpha = 1.0;
            loop {
                let trial: Vec<f64> = y.iter().zip(dir.iter()).map(|(a, d)| a + alpha * d).collect();
                match respond(&market, &trial) {
                    Ok(next) => {
                        accepted = Some((trial, next, StepKind::FixedPoint));
                        break;
                    }
                    Err(_) if alpha > 1e-12 => alpha *= 0.5,
                    Err(e) => return Err(e.into()),
                }
            }
        }
        let (trial, next, kind) = accepted.expect("a step is always taken");
        y = trial;
        resp = next;
        phi = dual_value(&market, &resp);
        residual_history.push(two_norm(&resp.residual));
        dual_history.push(phi);
        steps.push(kind);
        let inf = inf_norm(&resp.residual);
        if inf < best.0 {
            best = (inf, y.clone());
        }
    }

    let residual = ResidualReport::from_vec(market.n_ods(), &resp.residual);
    Ok(EquilibriumSolution {
        market,
        y,
        prices: resp.prices,
        traveler: resp.traveler,
        driver: resp.driver,
        residual,
        iterations,
        wall_time: elapsed(),
        residual_history,
        dual_history,
        steps,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Splits converged duals into the price system; `η` follows from `ρ` and `λ`.
pub fn extract_prices(y: &[f64], market: &Market) -> Result<PriceSystem, ChoiceError> {
    PriceSystem::from_duals(market, y)
}

/// Solves from `k` random starting duals (uniform in `[-10, 10]`) and returns
/// the largest inf-norm distance between any two converged dual vectors.
pub fn uniqueness_probe(sc: &Scenario, k: usize, seed: u64) -> Result<f64, EquilibriumError> {
    let market = Market::new(sc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut found: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k.max(2) {
        let y0 = (0..market.dim()).map(|_| rng.gen_range(-10.0..=10.0)).collect();
        let opts = SolveOptions {
            y0: Some(y0),
            ..SolveOptions::default()
        };
        found.push(solve_market(market.clone(), &opts)?.y);
    }
    let mut worst: f64 = 0.0;
    for a in 0..found.len() {
        for b in a + 1..found.len() {
            let gap = found[a].iter().zip(&found[b]).map(|(x, y)| (x - y).abs());
            worst = worst.max(gap.fold(0.0, f64::max));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    /// Traveler mode choice at given traveler prices.
    Traveler,
    /// Driver relocation and sign-out at given driver prices and node values.
    Driver,
    /// Joint program in monetary units, free of prices.
    Combined,
}

fn xlogx_minus_x(q: f64) -> f64 {
    if q == 0.0 {
        0.0
    } else {
        q * (q.ln() - 1.0)
    }
}

/// Objective of the requested program at the given flows. Price-dependent
/// terms use `prices`; the driver program weighs node values by `β₃`.
pub fn objective_value(
    model: Model,
    market: &Market,
    traveler: &TravelerFlows,
    driver: &DriverFlows,
    prices: &PriceSystem,
) -> Result<f64, EquilibriumError> {
    let wants_traveler = model != Model::Driver;
    let wants_driver = model != Model::Traveler;
    if wants_traveler && traveler.rows().iter().flatten().any(|&q| q <= 0.0) {
        return Err(EquilibriumError::NonPositiveFlow("traveler objective"));
    }
    if wants_driver
        && (0..market.n_nodes())
            .any(|i| driver.leg_flows(i).iter().any(|&q| q <= 0.0) || driver.signout()[i] <= 0.0)
    {
        return Err(EquilibriumError::NonPositiveFlow("driver objective"));
    }
    let (b2, b3) = (market.beta2, market.beta3);
    let mut total = 0.0;
    if wants_traveler {
        let zero = PriceSystem::zero(market);
        for k in 0..market.n_ods() {
            let u = match model {
                Model::Combined => od_utilities(market, k, &zero),
                _ => od_utilities(market, k, prices),
            };
            let q = traveler.od(k);
            let part: f64 = (0..3).map(|c| xlogx_minus_x(q[c]) - q[c] * u[c]).sum();
            total += if model == Model::Combined { part / b2 } else { part };
        }
    }
    if wants_driver {
        let l = market.n_legs();
        for i in 0..market.n_nodes() {
            let mut part = 0.0;
            for j in 0..l {
                let mut u = market.driver_base[i * l + j];
                if model == Model::Driver {
                    u += b3 * prices.rho_leg(j);
                }
                let q = driver.flow(i, j);
                part += xlogx_minus_x(q) - q * u;
            }
            let h = driver.signout()[i];
            part += xlogx_minus_x(h) - h * market.signout_base[i];
            if model == Model::Driver {
                part -= b3 * prices.lambda()[i] * (driver.stocks()[i] - market.signin[i]);
                total += part;
            } else {
                total += part / b3;
            }
        }
    }
    Ok(total)
}
