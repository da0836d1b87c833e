use super::{validate, Scenario, ScenarioError};
use crate::netgraph::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LegKind {
    Direct,
    Hub,
}

/// A driver service leg: pickup at `r`, drop-off at `dest`.
#[derive(Debug, Clone, PartialEq)]
pub struct Leg {
    pub od: usize,
    pub kind: LegKind,
    pub r: NodeId,
    pub dest: NodeId,
    pub(crate) r_idx: usize,
    pub(crate) dest_idx: usize,
}

/// Validated, index-based view of a scenario with every price-independent
/// utility term precomputed. Legs are ordered as all direct legs (one per OD)
/// followed by all hub legs, which is also the order of the `ρ` block of the
/// dual vector.
#[derive(Debug, Clone)]
pub struct Market {
    pub(crate) nodes: Vec<NodeId>,
    pub(crate) legs: Vec<Leg>,
    pub(crate) demand: Vec<f64>,
    /// Price-free traveler utilities per OD, one row of three modes.
    pub(crate) base_utility: Vec<[f64; 3]>,
    /// Fixed out-of-pocket term entering the multimodal utility with `-β₂`.
    pub(crate) transit_fare: Vec<f64>,
    /// Price-free driver utility, row-major node × leg.
    pub(crate) driver_base: Vec<f64>,
    pub(crate) signout_base: Vec<f64>,
    pub(crate) signin: Vec<f64>,
    /// Relocation minutes, row-major node × leg.
    pub(crate) leg_times: Vec<f64>,
    pub(crate) beta2: f64,
    pub(crate) beta3: f64,
}

impl Market {
    pub fn new(sc: &Scenario) -> Result<Self, ScenarioError> {
        let violations = validate(sc);
        if !violations.is_empty() {
            return Err(ScenarioError::Invalid(violations));
        }
        let net = &sc.network;
        let idx = |n: NodeId| net.index_of(n).expect("validated node");
        let nodes = net.nodes().to_vec();
        let mut legs = Vec::with_capacity(2 * sc.ods.len());
        for kind in [LegKind::Direct, LegKind::Hub] {
            for (od, o) in sc.ods.iter().enumerate() {
                let dest = if kind == LegKind::Direct { o.s } else { o.hub };
                legs.push(Leg {
                    od,
                    kind,
                    r: o.r,
                    dest,
                    r_idx: idx(o.r),
                    dest_idx: idx(dest),
                });
            }
        }

        let tp = &sc.traveler;
        let base_utility = sc
            .ods
            .iter()
            .map(|o| {
                [
                    tp.beta0.drive
                        - tp.beta1.drive * (o.drive_time + o.parking_time)
                        - tp.beta2 * (o.drive_cost + o.parking_cost),
                    tp.beta0.ride - tp.beta1.ride * o.drive_time,
                    tp.beta0.multimodal
                        - tp.beta1.multimodal * (o.hub_access_time + o.transit_time)
                        - tp.beta1_wait * o.transit_wait,
                ]
            })
            .collect();

        let dp = &sc.driver;
        let times = sc.relocation_matrix();
        let n = nodes.len();
        let mut driver_base = Vec::with_capacity(n * legs.len());
        let mut leg_times = Vec::with_capacity(n * legs.len());
        for i in 0..n {
            for leg in &legs {
                let t = times[i * n + leg.r_idx];
                leg_times.push(t);
                driver_base.push(dp.beta0_r.at(leg.r) - dp.beta1 * t);
            }
        }
        let signout_base = nodes
            .iter()
            .map(|k| dp.beta0_h + dp.signout_bonus.get(k).copied().unwrap_or(0.0))
            .collect();

        Ok(Self {
            signin: nodes.iter().map(|&k| sc.signin_at(k)).collect(),
            nodes,
            legs,
            demand: sc.ods.iter().map(|o| o.demand).collect(),
            base_utility,
            transit_fare: sc.ods.iter().map(|o| o.transit_fare).collect(),
            driver_base,
            signout_base,
            leg_times,
            beta2: tp.beta2,
            beta3: dp.beta3,
        })
    }

    pub fn n_ods(&self) -> usize {
        self.demand.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_legs(&self) -> usize {
        self.legs.len()
    }

    /// Dual dimension `2|RS| + |N|`.
    pub fn dim(&self) -> usize {
        self.legs.len() + self.nodes.len()
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn legs(&self) -> &[Leg] {
        &self.legs
    }

    pub fn index_of(&self, node: NodeId) -> Option<usize> {
        self.nodes.iter().position(|&n| n == node)
    }

    /// Relocation minutes from node index `i` to the pickup point of leg `j`.
    pub fn leg_time(&self, i: usize, j: usize) -> f64 {
        self.leg_times[i * self.legs.len() + j]
    }

    pub fn beta2(&self) -> f64 {
        self.beta2
    }

    pub fn beta3(&self) -> f64 {
        self.beta3
    }

    /// Nodes that receive no traveler drop-offs.
    pub(crate) fn idle_nodes(&self) -> Vec<usize> {
        let mut has_arrivals = vec![false; self.nodes.len()];
        for leg in &self.legs {
            has_arrivals[leg.dest_idx] = true;
        }
        (0..self.nodes.len()).filter(|&i| !has_arrivals[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin_5node;

    #[test]
    fn layout_of_five_node() {
        let m = Market::new(&builtin_5node()).unwrap();
        assert_eq!(m.dim(), 4 + 5);
        let dests: Vec<_> = m.legs().iter().map(|l| (l.r, l.dest)).collect();
        assert_eq!(dests, [(1, 2), (2, 1), (1, 3), (2, 4)]);
        assert_eq!(m.idle_nodes(), vec![4]);
        // node 5 to origin 1
        assert_eq!(m.leg_time(4, 0), 15.0);
        assert_eq!(m.leg_time(0, 0), 0.0);
    }

    #[test]
    fn invalid_scenarios_do_not_compile() {
        let mut sc = builtin_5node();
        sc.ods[0].demand = -1.0;
        assert!(matches!(Market::new(&sc), Err(ScenarioError::Invalid(v)) if v.len() == 1));
    }
}
