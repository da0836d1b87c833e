//! Closed-form logit models of travelers and drivers under a given price
//! system.

use thiserror::Error;

use crate::netgraph::NodeId;
use crate::scenario::{LegKind, Market};

/// Largest exponent evaluated without a shift. Beyond it a driver flow would
/// overflow, which only happens at a divergent dual iterate.
pub const EXP_BOUND: f64 = 700.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChoiceError {
    #[error("OD ({0}, {1}) is not part of the scenario")]
    UnknownOd(NodeId, NodeId),
    #[error("node {0} is not part of the scenario")]
    UnknownNode(NodeId),
    #[error("({0}, {1}) is not a driver service leg")]
    UnknownChoice(NodeId, NodeId),
    #[error("driver exponent {exponent:.3e} at node {node} exceeds the bound {EXP_BOUND}")]
    Overflow { node: NodeId, exponent: f64 },
    #[error("dual vector has length {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// Driver payments `ρ` per leg, node values `λ`, and the traveler prices
/// `η = ρ + λ(drop-off)` they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSystem {
    nodes: Vec<NodeId>,
    rho_direct: Vec<f64>,
    rho_hub: Vec<f64>,
    lambda: Vec<f64>,
    eta_direct: Vec<f64>,
    eta_hub: Vec<f64>,
}

impl PriceSystem {
    /// Splits a dual vector laid out as `[ρ_direct, ρ_hub, λ]`.
    pub fn from_duals(market: &Market, y: &[f64]) -> Result<Self, ChoiceError> {
        if y.len() != market.dim() {
            return Err(ChoiceError::DimensionMismatch {
                expected: market.dim(),
                found: y.len(),
            });
        }
        let m = market.n_ods();
        Ok(Self::new(
            market,
            y[..m].to_vec(),
            y[m..2 * m].to_vec(),
            y[2 * m..].to_vec(),
        ))
    }

    /// Panics if the block lengths do not match the market.
    pub fn new(market: &Market, rho_direct: Vec<f64>, rho_hub: Vec<f64>, lambda: Vec<f64>) -> Self {
        let m = market.n_ods();
        assert_eq!(rho_direct.len(), m);
        assert_eq!(rho_hub.len(), m);
        assert_eq!(lambda.len(), market.n_nodes());
        let legs = market.legs();
        let eta_direct = (0..m).map(|k| rho_direct[k] + lambda[legs[k].dest_idx]).collect();
        let eta_hub = (0..m)
            .map(|k| rho_hub[k] + lambda[legs[m + k].dest_idx])
            .collect();
        Self {
            nodes: market.nodes().to_vec(),
            rho_direct,
            rho_hub,
            lambda,
            eta_direct,
            eta_hub,
        }
    }

    pub fn zero(market: &Market) -> Self {
        let m = market.n_ods();
        Self::new(market, vec![0.0; m], vec![0.0; m], vec![0.0; market.n_nodes()])
    }

    pub fn rho_direct(&self) -> &[f64] {
        &self.rho_direct
    }

    pub fn rho_hub(&self) -> &[f64] {
        &self.rho_hub
    }

    /// Node values in network node order.
    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn lambda_at(&self, node: NodeId) -> Option<f64> {
        self.nodes.iter().position(|&n| n == node).map(|i| self.lambda[i])
    }

    pub fn eta_direct(&self) -> &[f64] {
        &self.eta_direct
    }

    pub fn eta_hub(&self) -> &[f64] {
        &self.eta_hub
    }

    /// `ρ` of leg `j` in market leg order.
    pub fn rho_leg(&self, j: usize) -> f64 {
        let m = self.rho_direct.len();
        if j < m {
            self.rho_direct[j]
        } else {
            self.rho_hub[j - m]
        }
    }

    pub fn duals(&self) -> Vec<f64> {
        [&self.rho_direct[..], &self.rho_hub, &self.lambda].concat()
    }
}

/// Traveler flows per OD as `[drive, ride, multimodal]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TravelerFlows {
    q: Vec<[f64; 3]>,
}

impl TravelerFlows {
    pub fn from_rows(q: Vec<[f64; 3]>) -> Self {
        Self { q }
    }

    pub fn od(&self, k: usize) -> [f64; 3] {
        self.q[k]
    }

    pub fn rows(&self) -> &[[f64; 3]] {
        &self.q
    }
}

/// Driver flows per node: one entry per service leg (market leg order), the
/// sign-out flow and the stock `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriverFlows {
    n_legs: usize,
    q: Vec<f64>,
    signout: Vec<f64>,
    stocks: Vec<f64>,
}

impl DriverFlows {
    /// `q` is row-major node × leg. Stocks are taken as given, not summed.
    pub fn from_parts(n_legs: usize, q: Vec<f64>, signout: Vec<f64>, stocks: Vec<f64>) -> Self {
        assert_eq!(q.len(), n_legs * stocks.len());
        assert_eq!(signout.len(), stocks.len());
        Self {
            n_legs,
            q,
            signout,
            stocks,
        }
    }

    pub fn leg_flows(&self, i: usize) -> &[f64] {
        &self.q[i * self.n_legs..(i + 1) * self.n_legs]
    }

    pub fn flow(&self, i: usize, j: usize) -> f64 {
        self.q[i * self.n_legs + j]
    }

    pub fn signout(&self) -> &[f64] {
        &self.signout
    }

    pub fn stocks(&self) -> &[f64] {
        &self.stocks
    }

    pub fn n_legs(&self) -> usize {
        self.n_legs
    }

    /// Drivers serving leg `j`, summed over their starting nodes.
    pub fn served(&self, j: usize) -> f64 {
        (0..self.stocks.len()).map(|i| self.flow(i, j)).sum()
    }
}

/// Max-shifted softmax.
pub fn softmax(u: &[f64]) -> Vec<f64> {
    let top = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = u.iter().map(|x| (x - top).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Log-sum-exp, shifted.
pub fn log_sum_exp(u: &[f64]) -> f64 {
    let top = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + u.iter().map(|x| (x - top).exp()).sum::<f64>().ln()
}

pub(crate) fn od_utilities(market: &Market, k: usize, prices: &PriceSystem) -> [f64; 3] {
    let [u1, u2, u3] = market.base_utility[k];
    let b2 = market.beta2;
    [
        u1,
        u2 - b2 * prices.eta_direct[k],
        u3 - b2 * (prices.eta_hub[k] + market.transit_fare[k]),
    ]
}

fn od_index(market: &Market, r: NodeId, s: NodeId) -> Result<usize, ChoiceError> {
    market.legs()[..market.n_ods()]
        .iter()
        .position(|l| l.r == r && l.dest == s)
        .ok_or(ChoiceError::UnknownOd(r, s))
}

/// Utilities `(U_drive, U_ride, U_multimodal)` of OD `(r, s)`.
pub fn traveler_utilities(
    market: &Market,
    od: (NodeId, NodeId),
    prices: &PriceSystem,
) -> Result<[f64; 3], ChoiceError> {
    Ok(od_utilities(market, od_index(market, od.0, od.1)?, prices))
}

pub fn traveler_flows(market: &Market, prices: &PriceSystem) -> TravelerFlows {
    let q = (0..market.n_ods())
        .map(|k| {
            let p = softmax(&od_utilities(market, k, prices));
            let d = market.demand[k];
            [d * p[0], d * p[1], d * p[2]]
        })
        .collect();
    TravelerFlows { q }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriverChoice {
    /// Serve the leg picking up at the first node and dropping off at the second.
    Leg(NodeId, NodeId),
    SignOut,
}

fn node_index(market: &Market, n: NodeId) -> Result<usize, ChoiceError> {
    market.index_of(n).ok_or(ChoiceError::UnknownNode(n))
}

/// Utility of one choice for a driver currently at `n`.
pub fn driver_utilities(
    market: &Market,
    n: NodeId,
    choice: DriverChoice,
    prices: &PriceSystem,
) -> Result<f64, ChoiceError> {
    let i = node_index(market, n)?;
    match choice {
        DriverChoice::SignOut => Ok(market.signout_base[i]),
        DriverChoice::Leg(r, s) => {
            let j = market
                .legs()
                .iter()
                .position(|l| l.r == r && l.dest == s)
                .ok_or(ChoiceError::UnknownChoice(r, s))?;
            Ok(leg_utility(market, i, j, prices))
        }
    }
}

fn leg_utility(market: &Market, i: usize, j: usize, prices: &PriceSystem) -> f64 {
    market.driver_base[i * market.n_legs() + j] + market.beta3 * prices.rho_leg(j)
}

/// Logit split of `q_n` drivers at node `n`: per-leg flows in market leg
/// order, then the sign-out flow.
pub fn driver_flows_logit(
    market: &Market,
    n: NodeId,
    q_n: f64,
    prices: &PriceSystem,
) -> Result<(Vec<f64>, f64), ChoiceError> {
    let i = node_index(market, n)?;
    let mut u: Vec<f64> = (0..market.n_legs())
        .map(|j| leg_utility(market, i, j, prices))
        .collect();
    u.push(market.signout_base[i]);
    let mut flows: Vec<f64> = softmax(&u).into_iter().map(|p| q_n * p).collect();
    let signout = flows.pop().expect("sign-out entry");
    Ok((flows, signout))
}

/// Driver flows implied directly by the duals:
/// `q_nj = exp(U_nj + β₃λ_n)`, `q_nH = exp(U_nH + β₃λ_n)`.
pub fn driver_flows_dual(market: &Market, prices: &PriceSystem) -> Result<DriverFlows, ChoiceError> {
    let (n, l) = (market.n_nodes(), market.n_legs());
    let b3 = market.beta3;
    let mut q = Vec::with_capacity(n * l);
    let mut signout = Vec::with_capacity(n);
    let mut stocks = Vec::with_capacity(n);
    let guard = |i: usize, x: f64| {
        if x > EXP_BOUND || x.is_nan() {
            Err(ChoiceError::Overflow {
                node: market.nodes()[i],
                exponent: x,
            })
        } else {
            Ok(x.exp())
        }
    };
    for i in 0..n {
        let shift = b3 * prices.lambda[i];
        let row_start = q.len();
        for j in 0..l {
            q.push(guard(i, leg_utility(market, i, j, prices) + shift)?);
        }
        let h = guard(i, market.signout_base[i] + shift)?;
        signout.push(h);
        stocks.push(q[row_start..].iter().sum::<f64>() + h);
    }
    Ok(DriverFlows {
        n_legs: l,
        q,
        signout,
        stocks,
    })
}

/// Traveler arrivals at every node: ride drop-offs at destinations plus
/// multimodal drop-offs at hubs.
pub fn arrivals(market: &Market, traveler: &TravelerFlows) -> Vec<f64> {
    let m = market.n_ods();
    let mut out = vec![0.0; market.n_nodes()];
    for (j, leg) in market.legs().iter().enumerate() {
        let mode = match leg.kind {
            LegKind::Direct => 1,
            LegKind::Hub => 2,
        };
        out[leg.dest_idx] += traveler.q[j % m][mode];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin_5node;
    use approx::assert_relative_eq;

    fn market() -> Market {
        Market::new(&builtin_5node()).unwrap()
    }

    #[test]
    fn softmax_reference_values() {
        let p = softmax(&[1.0, 2.0, 0.0]);
        assert_relative_eq!(100.0 * p[0], 24.472_847_105_479_765, max_relative = 1e-14);
        assert_relative_eq!(100.0 * p[1], 66.524_095_577_482_19, max_relative = 1e-14);
        assert_relative_eq!(100.0 * p[2], 9.003_057_317_038_046, max_relative = 1e-14);
        let even = softmax(&[3.5; 3]);
        assert!(even.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert_relative_eq!(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln());
        assert_relative_eq!(log_sum_exp(&[0.0, 0.0, 0.0]), 3f64.ln());
    }

    #[test]
    fn zero_prices_and_costs_give_intercepts() {
        let mut sc = builtin_5node();
        for o in &mut sc.ods {
            o.drive_time = 0.0;
            o.hub_access_time = 0.0;
            o.transit_time = 0.0;
            o.transit_wait = 0.0;
            o.transit_fare = 0.0;
            o.drive_cost = 0.0;
            o.parking_time = 0.0;
            o.parking_cost = 0.0;
        }
        let m = Market::new(&sc).unwrap();
        let u = traveler_utilities(&m, (1, 2), &PriceSystem::zero(&m)).unwrap();
        assert_eq!(u, [4.0, 2.0, 1.0]);
    }

    #[test]
    fn ride_utility_at_given_price() {
        let m = market();
        // η(1,2) = 10 through ρ alone
        let p = PriceSystem::new(&m, vec![10.0, 0.0], vec![0.0; 2], vec![0.0; 5]);
        let u = traveler_utilities(&m, (1, 2), &p).unwrap();
        assert_relative_eq!(u[1], 2.0 - 0.2 * 10.0 - 10.0);
        let p2 = PriceSystem::new(&m, vec![10.5, 0.0], vec![0.0; 2], vec![0.0; 5]);
        let u2 = traveler_utilities(&m, (1, 2), &p2).unwrap();
        assert_relative_eq!(u[1] - u2[1], 0.5 * m.beta2());
        assert!(matches!(
            traveler_utilities(&m, (1, 5), &p),
            Err(ChoiceError::UnknownOd(1, 5))
        ));
    }

    #[test]
    fn price_identities_are_exact() {
        let m = market();
        let p = PriceSystem::new(&m, vec![3.0, 1.0], vec![0.0, 2.0], vec![-1.0, 0.5, 0.0, 4.0, 9.0]);
        // OD (1,2) drops off at 2, OD (2,1) at 1
        assert_eq!(p.eta_direct(), &[3.5, 0.0]);
        // hubs 3 and 4
        assert_eq!(p.eta_hub(), &[0.0, 6.0]);
        assert_eq!(PriceSystem::from_duals(&m, &p.duals()).unwrap(), p);
        assert!(PriceSystem::from_duals(&m, &[0.0; 3]).is_err());
    }

    #[test]
    fn traveler_flows_conserve_demand() {
        let m = market();
        let p = PriceSystem::new(
            &m,
            vec![40.0, -7.0],
            vec![1.0, 2.0],
            vec![3.0, -2.0, 0.0, 0.0, 1.0],
        );
        for row in traveler_flows(&m, &p).rows() {
            assert_relative_eq!(row.iter().sum::<f64>(), 100.0, max_relative = 1e-15);
            assert!(row.iter().all(|&x| x > 0.0));
        }
    }

    #[test]
    fn driver_utility_values() {
        let m = market();
        let zero = PriceSystem::zero(&m);
        assert_eq!(
            driver_utilities(&m, 1, DriverChoice::Leg(1, 2), &zero).unwrap(),
            0.0
        );
        assert_eq!(
            driver_utilities(&m, 3, DriverChoice::SignOut, &zero).unwrap(),
            2.0
        );
        let p = PriceSystem::new(&m, vec![12.0, 0.0], vec![0.0; 2], vec![0.0; 5]);
        assert_relative_eq!(
            driver_utilities(&m, 5, DriverChoice::Leg(1, 2), &p).unwrap(),
            0.0 - 0.3 * 15.0 + 12.0
        );
        assert!(driver_utilities(&m, 5, DriverChoice::Leg(5, 1), &p).is_err());
        assert!(driver_utilities(&m, 6, DriverChoice::SignOut, &p).is_err());
    }

    #[test]
    fn logit_split_edge_cases() {
        let mut sc = builtin_5node();
        sc.driver.beta1 = 0.0;
        sc.driver.beta0_h = 0.0;
        let m = Market::new(&sc).unwrap();
        let (legs, h) = driver_flows_logit(&m, 5, 20.0, &PriceSystem::zero(&m)).unwrap();
        assert!(legs.iter().chain([&h]).all(|&x| (x - 4.0).abs() < 1e-14));
        let (legs, h) = driver_flows_logit(&m, 5, 0.0, &PriceSystem::zero(&m)).unwrap();
        assert!(legs.iter().all(|&x| x == 0.0) && h == 0.0);
    }

    #[test]
    fn dual_flows_closed_form() {
        let m = market();
        let d = driver_flows_dual(&m, &PriceSystem::zero(&m)).unwrap();
        assert_relative_eq!(d.signout()[0], 2f64.exp(), max_relative = 1e-15);
        let lam = vec![-2.0; 5];
        let p = PriceSystem::new(&m, vec![0.0; 2], vec![0.0; 2], lam);
        let d = driver_flows_dual(&m, &p).unwrap();
        assert_relative_eq!(d.signout()[3], 1.0, max_relative = 1e-15);
        for i in 0..5 {
            let row: f64 = d.leg_flows(i).iter().sum::<f64>() + d.signout()[i];
            assert_relative_eq!(row, d.stocks()[i], max_relative = 1e-15);
        }
    }

    #[test]
    fn dual_shares_match_logit_and_ignore_lambda() {
        let m = market();
        let base = PriceSystem::new(&m, vec![1.0, -2.0], vec![0.5, 3.0], vec![0.0; 5]);
        let shifted = PriceSystem::new(
            &m,
            vec![1.0, -2.0],
            vec![0.5, 3.0],
            vec![4.0, -3.0, 1.0, 0.0, 7.0],
        );
        let a = driver_flows_dual(&m, &base).unwrap();
        let b = driver_flows_dual(&m, &shifted).unwrap();
        for (i, &n) in m.nodes().iter().enumerate() {
            let (legs, h) = driver_flows_logit(&m, n, b.stocks()[i], &shifted).unwrap();
            for j in 0..m.n_legs() {
                assert_relative_eq!(legs[j], b.flow(i, j), max_relative = 1e-12);
                assert_relative_eq!(
                    a.flow(i, j) / a.stocks()[i],
                    b.flow(i, j) / b.stocks()[i],
                    max_relative = 1e-12
                );
            }
            assert_relative_eq!(h, b.signout()[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn overflow_is_guarded() {
        let m = market();
        let p = PriceSystem::new(&m, vec![0.0; 2], vec![0.0; 2], vec![800.0, 0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(
            driver_flows_dual(&m, &p),
            Err(ChoiceError::Overflow { node: 1, .. })
        ));
    }

    #[test]
    fn arrivals_count_both_kinds() {
        let m = market();
        let t = traveler_flows(&m, &PriceSystem::zero(&m));
        let a = arrivals(&m, &t);
        assert_eq!(a[0], t.od(1)[1]);
        assert_eq!(a[2], t.od(0)[2]);
        assert_eq!(a[4], 0.0);
    }
}
