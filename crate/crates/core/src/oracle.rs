//! Independent checks of a computed equilibrium: stationarity of the primal
//! Lagrangian by finite differences, brute-force dual search on tiny
//! instances, and random feasible perturbations of the joint program.
//!
//! Nothing here calls into the Newton solver. Flows are rebuilt from the
//! choice models alone.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::choice::{
    arrivals, driver_flows_dual, driver_flows_logit, log_sum_exp, traveler_flows, traveler_utilities,
    ChoiceError, DriverFlows, PriceSystem, TravelerFlows,
};
use crate::equilibrium::EquilibriumSolution;
use crate::scenario::Market;

/// Relative central-difference step of [`kkt_check`].
pub const KKT_STEP: f64 = 1e-6;

pub const GRID_HALF_WIDTH: f64 = 50.0;
pub const GRID_POINTS: usize = 21;
pub const GRID_SHRINK: f64 = 5.0;
pub const GRID_ROUNDS: usize = 12;
pub const GRID_MAX_DIM: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{0} must be strictly positive for the check")]
    NonPositiveFlow(String),
    #[error("grid search handles at most {GRID_MAX_DIM} free duals, instance has {0}")]
    DimensionTooLarge(usize),
    #[error(transparent)]
    Choice(#[from] ChoiceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktReport {
    /// Largest absolute partial derivative of the Lagrangian over all primal
    /// coordinates.
    pub stationarity: f64,
    /// Largest absolute violation of any equality constraint.
    pub constraint_violation: f64,
    pub step: f64,
}

/// Central difference of a scalar function at `x` with relative step.
fn central(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = KKT_STEP * x.abs().max(f64::MIN_POSITIVE);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn entropy_term(q: f64, u: f64) -> f64 {
    q * (q.ln() - 1.0 - u)
}

/// Stationarity and feasibility of the joint program at the given primal
/// flows and duals `y = [ρ_direct, ρ_hub, λ]`.
///
/// The Lagrangian is
/// `f + Σμ(Σq−d) + Σν(Σq^D+q^H−Q) + Σρ(q^T−Σq^D) + Σλ(arrivals+ΔQ−Q)`.
/// Node multipliers are `ν = −λ`; OD multipliers follow from the traveler
/// rows as `μ = −(ln d − LSE(U))/β₂`. Since the Lagrangian is a sum of
/// single-coordinate terms, each partial derivative is differenced on its own
/// term, which keeps the estimate free of cancellation.
pub fn kkt_check(
    market: &Market,
    traveler: &TravelerFlows,
    driver: &DriverFlows,
    y: &[f64],
) -> Result<KktReport, OracleError> {
    let prices = PriceSystem::from_duals(market, y)?;
    let (m, l, n) = (market.n_ods(), market.n_legs(), market.n_nodes());
    let (b2, b3) = (market.beta2, market.beta3);
    let legs = market.legs();
    let lam = prices.lambda();
    let zero = PriceSystem::zero(market);

    let mut worst: f64 = 0.0;
    for k in 0..m {
        let q = traveler.od(k);
        if q.iter().any(|&x| x <= 0.0) {
            return Err(OracleError::NonPositiveFlow(format!("traveler flow of OD {k}")));
        }
        let u0 = crate::choice::od_utilities(market, k, &zero);
        let u = crate::choice::od_utilities(market, k, &prices);
        let mu = -(market.demand[k].ln() - log_sum_exp(&u)) / b2;
        // linear coefficient of each mode: μ, plus the clearing multipliers
        let lin = [
            mu,
            mu + prices.rho_direct()[k] + lam[legs[k].dest_idx],
            mu + prices.rho_hub()[k] + lam[legs[m + k].dest_idx],
        ];
        for c in 0..3 {
            let g = central(|x| entropy_term(x, u0[c]) / b2 + lin[c] * x, q[c]);
            worst = worst.max(g.abs());
        }
    }
    for i in 0..n {
        let nu = -lam[i];
        for j in 0..l {
            let q = driver.flow(i, j);
            if q <= 0.0 {
                return Err(OracleError::NonPositiveFlow(format!("driver flow ({i}, {j})")));
            }
            let a = market.driver_base[i * l + j];
            let g = central(|x| entropy_term(x, a) / b3 + (nu - prices.rho_leg(j)) * x, q);
            worst = worst.max(g.abs());
        }
        let h = driver.signout()[i];
        if h <= 0.0 {
            return Err(OracleError::NonPositiveFlow(format!(
                "sign-out flow at node index {i}"
            )));
        }
        let b = market.signout_base[i];
        worst = worst.max(central(|x| entropy_term(x, b) / b3 + nu * x, h).abs());
        // Q appears only linearly
        let stock = driver.stocks()[i];
        worst = worst.max(central(|x| (-nu - lam[i]) * x, stock).abs());
    }

    Ok(KktReport {
        stationarity: worst,
        constraint_violation: constraint_violation(market, traveler, driver),
        step: KKT_STEP,
    })
}

pub fn kkt_check_solution(sol: &EquilibriumSolution) -> Result<KktReport, OracleError> {
    kkt_check(&sol.market, &sol.traveler, &sol.driver, &sol.y)
}

fn constraint_violation(market: &Market, traveler: &TravelerFlows, driver: &DriverFlows) -> f64 {
    let m = market.n_ods();
    let mut worst: f64 = 0.0;
    for k in 0..m {
        let q = traveler.od(k);
        worst = worst.max((q[0] + q[1] + q[2] - market.demand[k]).abs());
    }
    for i in 0..market.n_nodes() {
        let row: f64 = driver.leg_flows(i).iter().sum::<f64>() + driver.signout()[i];
        worst = worst.max((row - driver.stocks()[i]).abs());
    }
    for j in 0..market.n_legs() {
        let mode = if j < m { 1 } else { 2 };
        worst = worst.max((driver.served(j) - traveler.od(j % m)[mode]).abs());
    }
    let arr = arrivals(market, traveler);
    for i in 0..market.n_nodes() {
        worst = worst.max((driver.stocks()[i] - arr[i] - market.signin[i]).abs());
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplayReport {
    /// Largest relative gap between replayed and solver traveler flows.
    pub traveler: f64,
    /// Largest relative gap between replayed and solver driver flows,
    /// sign-outs included.
    pub driver: f64,
}

impl ReplayReport {
    pub fn worst(&self) -> f64 {
        self.traveler.max(self.driver)
    }
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Feeds the extracted prices back through the stand-alone choice models:
/// traveler logit on `η` per OD, and driver logit splitting each node's stock
/// `Q_n` over legs and sign-out on `ρ`.
pub fn logit_replay(sol: &EquilibriumSolution) -> Result<ReplayReport, OracleError> {
    let mk = &sol.market;
    let mut traveler: f64 = 0.0;
    for (k, leg) in mk.legs()[..mk.n_ods()].iter().enumerate() {
        let u = traveler_utilities(mk, (leg.r, leg.dest), &sol.prices)?;
        let p = crate::choice::softmax(&u);
        for c in 0..3 {
            traveler = traveler.max(relative_gap(mk.demand[k] * p[c], sol.traveler.od(k)[c]));
        }
    }
    let mut driver: f64 = 0.0;
    for (i, &node) in mk.nodes().iter().enumerate() {
        let (legs, out) = driver_flows_logit(mk, node, sol.driver.stocks()[i], &sol.prices)?;
        for (j, q) in legs.iter().enumerate() {
            driver = driver.max(relative_gap(*q, sol.driver.flow(i, j)));
        }
        driver = driver.max(relative_gap(out, sol.driver.signout()[i]));
    }
    Ok(ReplayReport { traveler, driver })
}

/// Market view with the λ of every node without arrivals eliminated: such a
/// node must end with exactly its sign-ins, which fixes its λ given ρ.
struct Reduced<'a> {
    market: &'a Market,
    free_nodes: Vec<usize>,
    idle_nodes: Vec<usize>,
}

impl<'a> Reduced<'a> {
    fn new(market: &'a Market) -> Self {
        let idle_nodes = market.idle_nodes();
        let free_nodes = (0..market.n_nodes())
            .filter(|i| !idle_nodes.contains(i))
            .collect();
        Self {
            market,
            free_nodes,
            idle_nodes,
        }
    }

    fn dim(&self) -> usize {
        self.market.n_legs() + self.free_nodes.len()
    }

    /// Full dual vector from the free coordinates `[ρ, λ(arrival nodes)]`.
    fn expand(&self, z: &[f64]) -> Vec<f64> {
        let mk = self.market;
        let l = mk.n_legs();
        let mut y = vec![0.0; mk.dim()];
        y[..l].copy_from_slice(&z[..l]);
        for (c, &i) in self.free_nodes.iter().enumerate() {
            y[l + i] = z[l + c];
        }
        for &i in &self.idle_nodes {
            let mut u: Vec<f64> = (0..l)
                .map(|j| mk.driver_base[i * l + j] + mk.beta3 * z[j])
                .collect();
            u.push(mk.signout_base[i]);
            y[l + i] = (mk.signin[i].ln() - log_sum_exp(&u)) / mk.beta3;
        }
        y
    }

    /// Flows at the expanded point, from the choice models only.
    fn flows(&self, z: &[f64]) -> Result<(Vec<f64>, TravelerFlows, DriverFlows), ChoiceError> {
        let y = self.expand(z);
        let prices = PriceSystem::from_duals(self.market, &y)?;
        let t = traveler_flows(self.market, &prices);
        let d = driver_flows_dual(self.market, &prices)?;
        Ok((y, t, d))
    }

    /// Log-ratio clearing gaps, plus the implied balance of total sign-outs
    /// against total sign-ins. The balance row removes a flat valley in which
    /// served and requested rides grow together.
    fn merit(&self, z: &[f64]) -> f64 {
        let Ok((_, t, d)) = self.flows(z) else {
            return f64::INFINITY;
        };
        let mk = self.market;
        let m = mk.n_ods();
        let gap = |a: f64, b: f64| (a.ln() - b.ln()).abs();
        let mut worst: f64 = 0.0;
        for j in 0..mk.n_legs() {
            let mode = if j < m { 1 } else { 2 };
            worst = worst.max(gap(d.served(j), t.od(j % m)[mode]));
        }
        let arr = arrivals(mk, &t);
        for &i in &self.free_nodes {
            worst = worst.max(gap(d.stocks()[i], arr[i] + mk.signin[i]));
        }
        let out: f64 = d.signout().iter().sum();
        let sign_in: f64 = mk.signin.iter().sum();
        worst = worst.max(gap(out, sign_in));
        if worst.is_nan() {
            f64::INFINITY
        } else {
            worst
        }
    }

    fn raw_gap(&self, z: &[f64]) -> Result<f64, ChoiceError> {
        let (_, t, d) = self.flows(z)?;
        Ok(constraint_violation(self.market, &t, &d))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSolution {
    /// Full dual vector `[ρ_direct, ρ_hub, λ]`.
    pub y: Vec<f64>,
    /// Largest raw clearing gap at `y`.
    pub residual: f64,
    /// Grid spacing of the last round. The clearing gap cannot be resolved
    /// below roughly half this spacing times the largest flow sensitivity.
    pub spacing: f64,
}

/// Nested grid refinement over the free duals of a tiny instance: 21 points
/// per axis on `[-50, 50]`, recentred on the best point and shrunk fivefold,
/// 12 rounds.
pub fn grid_solve_micro(market: &Market) -> Result<GridSolution, OracleError> {
    let red = Reduced::new(market);
    let dim = red.dim();
    if dim > GRID_MAX_DIM {
        return Err(OracleError::DimensionTooLarge(dim));
    }
    let mut center = vec![0.0; dim];
    let mut half = GRID_HALF_WIDTH;
    let total = GRID_POINTS.pow(dim as u32);
    let mut z = vec![0.0; dim];
    let mut spacing = 0.0;
    for _ in 0..GRID_ROUNDS {
        spacing = 2.0 * half / (GRID_POINTS - 1) as f64;
        let mut best = (f64::INFINITY, center.clone());
        for flat in 0..total {
            let mut rest = flat;
            for c in 0..dim {
                let k = rest % GRID_POINTS;
                rest /= GRID_POINTS;
                z[c] = center[c] - half + spacing * k as f64;
            }
            let v = red.merit(&z);
            if v < best.0 {
                best = (v, z.clone());
            }
        }
        center = best.1;
        half /= GRID_SHRINK;
    }
    Ok(GridSolution {
        y: red.expand(&center),
        residual: red.raw_gap(&center)?,
        spacing,
    })
}

/// Primal point of the joint program laid out as
/// `[q^T (3 per OD), q^D (node × leg), q^H, Q]`, with per-entry objective
/// weights and linear utilities.
struct Primal {
    x: Vec<f64>,
    weight: Vec<f64>,
    utility: Vec<f64>,
    /// Entries up to here carry an entropy term; stocks do not.
    n_entropy: usize,
}

fn primal(sol: &EquilibriumSolution) -> Primal {
    let mk = &sol.market;
    let (m, l, n) = (mk.n_ods(), mk.n_legs(), mk.n_nodes());
    let zero = PriceSystem::zero(mk);
    let mut x = Vec::new();
    let mut weight = Vec::new();
    let mut utility = Vec::new();
    for k in 0..m {
        let u = crate::choice::od_utilities(mk, k, &zero);
        for c in 0..3 {
            x.push(sol.traveler.od(k)[c]);
            weight.push(1.0 / mk.beta2);
            utility.push(u[c]);
        }
    }
    for i in 0..n {
        for j in 0..l {
            x.push(sol.driver.flow(i, j));
            weight.push(1.0 / mk.beta3);
            utility.push(mk.driver_base[i * l + j]);
        }
    }
    for i in 0..n {
        x.push(sol.driver.signout()[i]);
        weight.push(1.0 / mk.beta3);
        utility.push(mk.signout_base[i]);
    }
    let n_entropy = x.len();
    x.extend_from_slice(sol.driver.stocks());
    Primal {
        x,
        weight,
        utility,
        n_entropy,
    }
}

/// Equality constraint matrix in the primal layout above.
fn constraint_matrix(mk: &Market) -> DMatrix<f64> {
    let (m, l, n) = (mk.n_ods(), mk.n_legs(), mk.n_nodes());
    let cols = 3 * m + n * l + 2 * n;
    let rows = m + n + l + n;
    let qd = |i: usize, j: usize| 3 * m + i * l + j;
    let qh = |i: usize| 3 * m + n * l + i;
    let stock = |i: usize| 3 * m + n * l + n + i;
    let mut a = DMatrix::zeros(rows, cols);
    for k in 0..m {
        for c in 0..3 {
            a[(k, 3 * k + c)] = 1.0;
        }
    }
    for i in 0..n {
        let r = m + i;
        for j in 0..l {
            a[(r, qd(i, j))] = 1.0;
        }
        a[(r, qh(i))] = 1.0;
        a[(r, stock(i))] = -1.0;
    }
    for j in 0..l {
        let r = m + n + j;
        for i in 0..n {
            a[(r, qd(i, j))] = 1.0;
        }
        let mode = if j < m { 1 } else { 2 };
        a[(r, 3 * (j % m) + mode)] -= 1.0;
    }
    for (j, leg) in mk.legs().iter().enumerate() {
        let mode = if j < m { 1 } else { 2 };
        a[(m + n + l + leg.dest_idx, 3 * (j % m) + mode)] -= 1.0;
    }
    for i in 0..n {
        a[(m + n + l + i, stock(i))] = 1.0;
    }
    a
}

/// Feasible directions in the primal layout, as relative changes scaled back
/// by the point itself. Ride and multimodal flows and driver leg flows move at
/// random; each leg's served flows and requested flow are then projected onto
/// their clearing row, which touches no other row's coordinates. Driving
/// absorbs each OD's change, stocks follow arrivals and sign-outs close every
/// node balance, so each dependent move is a short sum of independent ones.
fn feasible_directions(p: &Primal, mk: &Market, samples: usize, seed: u64) -> Vec<DVector<f64>> {
    let (m, l, n) = (mk.n_ods(), mk.n_legs(), mk.n_nodes());
    let qd = |i: usize, j: usize| 3 * m + i * l + j;
    let qh = |i: usize| 3 * m + n * l + i;
    let stock = |i: usize| 3 * m + n * l + n + i;
    let request = |j: usize| 3 * (j % m) + if j < m { 1 } else { 2 };
    let legs = mk.legs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples)
        .map(|_| {
            let mut d = DVector::zeros(p.x.len());
            for j in 0..l {
                // served minus requested is zero along `coef · u`
                let mut idx: Vec<usize> = (0..n).map(|i| qd(i, j)).collect();
                idx.push(request(j));
                let coef: Vec<f64> = idx
                    .iter()
                    .enumerate()
                    .map(|(k, &e)| if k < n { p.x[e] } else { -p.x[e] })
                    .collect();
                let u: Vec<f64> = idx.iter().map(|_| rng.gen_range(-1.0..=1.0)).collect();
                let dot: f64 = coef.iter().zip(&u).map(|(c, u)| c * u).sum();
                let norm: f64 = coef.iter().map(|c| c * c).sum();
                let u: Vec<f64> = u.iter().zip(&coef).map(|(u, c)| u - c * dot / norm).collect();
                // the largest coefficient absorbs the row exactly; projecting
                // it would leave roundoff far above its true move
                let top = (0..coef.len())
                    .max_by(|&a, &b| coef[a].abs().total_cmp(&coef[b].abs()))
                    .expect("a leg has a requested flow");
                let rest: f64 = (0..coef.len())
                    .filter(|&k| k != top)
                    .map(|k| coef[k] * u[k])
                    .sum();
                for (k, &e) in idx.iter().enumerate() {
                    d[e] = if k == top {
                        -rest / coef[k] * p.x[e]
                    } else {
                        p.x[e] * u[k]
                    };
                }
            }
            for k in 0..m {
                d[3 * k] = -(d[3 * k + 1] + d[3 * k + 2]);
            }
            for (j, leg) in legs.iter().enumerate() {
                d[stock(leg.dest_idx)] += d[request(j)];
            }
            for i in 0..n {
                let legs_out: f64 = (0..l).map(|j| d[qd(i, j)]).sum();
                d[qh(i)] = d[stock(i)] - legs_out;
            }
            let rel = d.iter().zip(&p.x).fold(0.0f64, |a, (d, x)| a.max((d / x).abs()));
            if rel > 0.0 {
                d / rel
            } else {
                d
            }
        })
        .collect()
}

/// `(1+r)ln(1+r) − r`, by series where the closed form cancels.
fn entropy_remainder(r: f64) -> f64 {
    if r.abs() < 1e-3 {
        let r2 = r * r;
        r2 * (0.5 - r / 6.0 + r2 / 12.0 - r2 * r / 20.0 + r2 * r2 / 30.0)
    } else {
        (1.0 + r) * r.ln_1p() - r
    }
}

/// Objective change along `delta`, split into its linear part and the
/// cancellation-free remainder of each entropy term.
fn objective_gap(p: &Primal, delta: &DVector<f64>) -> f64 {
    let mut gap = 0.0;
    for e in 0..p.n_entropy {
        let (x, d) = (p.x[e], delta[e]);
        gap += p.weight[e] * (d * (x.ln() - p.utility[e]) + x * entropy_remainder(d / x));
    }
    gap
}

/// Smallest objective increase of the joint program over `samples` random
/// feasible perturbations whose largest entry changes by `magnitude`
/// relative to the solution.
pub fn perturbation_gap(sol: &EquilibriumSolution, samples: usize, seed: u64, magnitude: f64) -> f64 {
    let p = primal(sol);
    feasible_directions(&p, &sol.market, samples, seed)
        .into_iter()
        .map(|d| objective_gap(&p, &(d * magnitude)))
        .fold(f64::INFINITY, f64::min)
}

/// [`perturbation_gap`] at relative magnitude `1e-3`; positive at a strict
/// minimum.
pub fn perturbation_probe(sol: &EquilibriumSolution, samples: usize, seed: u64) -> f64 {
    perturbation_gap(sol, samples, seed, 1e-3)
}

/// Largest equality-constraint violation along the perturbations, for
/// diagnostics.
pub fn perturbation_feasibility(sol: &EquilibriumSolution, samples: usize, seed: u64) -> f64 {
    let p = primal(sol);
    let a = constraint_matrix(&sol.market);
    feasible_directions(&p, &sol.market, samples, seed)
        .iter()
        .map(|d| (&a * d * 1e-3).amax())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{solve, SolveOptions};
    use crate::scenario::{builtin_5node, synthetic::random_scenario};
    use approx::assert_relative_eq;

    fn five_node() -> EquilibriumSolution {
        solve(&builtin_5node(), &SolveOptions::default()).unwrap()
    }

    #[test]
    fn replay_reproduces_flows() {
        let rep = logit_replay(&five_node()).unwrap();
        assert!(rep.worst() <= 1e-12, "{rep:?}");
    }

    #[test]
    fn stationary_at_solution() {
        let sol = five_node();
        let rep = kkt_check_solution(&sol).unwrap();
        assert!(rep.stationarity <= 1e-6, "{rep:?}");
        assert!(rep.constraint_violation <= 1e-9, "{rep:?}");
    }

    #[test]
    fn perturbed_flow_breaks_stationarity() {
        let sol = five_node();
        let base = kkt_check_solution(&sol).unwrap();
        let mut rows = sol.traveler.rows().to_vec();
        rows[0][1] += 1.0;
        let moved = TravelerFlows::from_rows(rows);
        let rep = kkt_check(&sol.market, &moved, &sol.driver, &sol.y).unwrap();
        assert!(rep.stationarity >= 1e-2);
        assert!(rep.stationarity >= 10.0 * base.stationarity);
    }

    #[test]
    fn perturbed_dual_breaks_stationarity() {
        let sol = five_node();
        let mut y = sol.y.clone();
        let last = y.len() - 1;
        y[last] += 1.0;
        let rep = kkt_check(&sol.market, &sol.traveler, &sol.driver, &y).unwrap();
        assert!(rep.stationarity > 1e-3);
    }

    #[test]
    fn zero_flow_is_rejected() {
        let sol = five_node();
        let mut rows = sol.traveler.rows().to_vec();
        rows[1][0] = 0.0;
        let t = TravelerFlows::from_rows(rows);
        assert!(matches!(
            kkt_check(&sol.market, &t, &sol.driver, &sol.y),
            Err(OracleError::NonPositiveFlow(_))
        ));
    }

    #[test]
    fn grid_matches_newton_on_micro() {
        let sc = &crate::scenario::micro_instances()[0];
        let sol = solve(sc, &SolveOptions::default()).unwrap();
        let g = grid_solve_micro(&sol.market).unwrap();
        let diff =
            g.y.iter()
                .zip(&sol.y)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        assert!(diff <= 1e-6, "{diff:e}");
        let jac = crate::equilibrium::jacobian(&sol.market, &sol.y).unwrap();
        let sensitivity = (0..jac.nrows())
            .map(|r| jac.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        assert!(g.residual <= sensitivity * g.spacing, "{g:?}");
    }

    #[test]
    fn symmetric_duals_for_mirrored_costs() {
        // hub access equal to the direct trip and equal leg times everywhere
        let mut sc = crate::scenario::micro_scenario(8.0, 8.0, 20.0, [5.0, 5.0, 5.0], 8.0);
        let od = &mut sc.ods[0];
        od.transit_time = 0.0;
        od.transit_wait = 0.0;
        od.transit_fare = 0.0;
        sc.traveler.beta0 = crate::scenario::ModeValues::new(0.0, 1.0, 1.0);
        sc.traveler.beta1 = crate::scenario::ModeValues::new(0.1, 0.2, 0.2);
        sc.traveler.beta1_wait = 0.0;
        let m = Market::new(&sc).unwrap();
        let sol = solve(&sc, &SolveOptions::default()).unwrap();
        let g = grid_solve_micro(&m).unwrap();
        let (rd, rh) = (sol.prices.rho_direct()[0], sol.prices.rho_hub()[0]);
        let (gd, gh) = (g.y[0], g.y[1]);
        assert!(
            (gd - gh).abs() <= 1e-6 && (rd - rh).abs() <= 1e-9,
            "{g:?} {rd} {rh}"
        );
    }

    #[test]
    fn large_instances_are_refused_by_grid() {
        let m = Market::new(&builtin_5node()).unwrap();
        assert!(matches!(
            grid_solve_micro(&m),
            Err(OracleError::DimensionTooLarge(8))
        ));
    }

    #[test]
    fn perturbations_are_feasible_and_increase_objective() {
        let sol = five_node();
        assert!(perturbation_feasibility(&sol, 20, 1) <= 1e-9);
        assert!(perturbation_probe(&sol, 100, 1) > 0.0);
        assert_eq!(perturbation_gap(&sol, 5, 1, 0.0), 0.0);
    }

    #[test]
    fn gap_is_second_order() {
        let sol = five_node();
        let a = perturbation_gap(&sol, 50, 9, 1e-3);
        let b = perturbation_gap(&sol, 50, 9, 5e-4);
        let ratio = a / b;
        assert!((3.0..=5.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn entropy_remainder_is_smooth_across_the_series_cutoff() {
        for r in [9.99e-4, 1.001e-3, -9.99e-4, -1.001e-3] {
            let direct = (1.0 + r) * f64::ln_1p(r) - r;
            assert_relative_eq!(entropy_remainder(r), direct, max_relative = 1e-9);
        }
        assert_relative_eq!(entropy_remainder(1e-30), 5e-61, max_relative = 1e-12);
    }

    #[test]
    fn gap_stays_positive_when_service_flows_vanish() {
        // drivers serve almost nothing here, so most moves sit far below the
        // roundoff of the large stocks
        let sol = solve(&random_scenario(1275), &SolveOptions::default()).unwrap();
        assert!(sol.driver.served(0) < 1e-9);
        assert!(perturbation_feasibility(&sol, 20, 1275) <= 1e-12);
        assert!(perturbation_probe(&sol, 20, 1275) > 0.0);
    }
}
