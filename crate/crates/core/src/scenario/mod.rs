//! Problem instances: network, traveler OD demand with transit hubs, driver
//! sign-in rates and the behavioral coefficients of both agent types.

mod builtin;
mod json;
mod market;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::netgraph::{Network, NodeId};

pub use builtin::{
    builtin_5node, builtin_sioux, by_id, micro_instances, micro_scenario, sioux_falls_network,
    SIOUX_FALLS_TNTP,
};
pub use json::{from_value, load, save, to_value};
pub use market::{Leg, LegKind, Market};

/// Per-mode coefficient triple (drive, ride-source, ride-source + transit).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeValues {
    pub drive: f64,
    pub ride: f64,
    pub multimodal: f64,
}

impl ModeValues {
    pub fn new(drive: f64, ride: f64, multimodal: f64) -> Self {
        Self {
            drive,
            ride,
            multimodal,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.drive, self.ride, self.multimodal]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TravelerParams {
    /// Mode attractiveness.
    pub beta0: ModeValues,
    /// In-vehicle time sensitivity per mode (1/minute).
    pub beta1: ModeValues,
    /// Transit waiting time sensitivity (1/minute).
    pub beta1_wait: f64,
    /// Price sensitivity (1/currency).
    pub beta2: f64,
}

/// Driver attractiveness of pickup origins: one value for all, or per node
/// (absent nodes read as zero).
#[derive(Debug, Clone, PartialEq)]
pub enum OriginAttractiveness {
    Uniform(f64),
    PerNode(BTreeMap<NodeId, f64>),
}

impl OriginAttractiveness {
    pub fn at(&self, node: NodeId) -> f64 {
        match self {
            Self::Uniform(v) => *v,
            Self::PerNode(m) => m.get(&node).copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriverParams {
    pub beta0_r: OriginAttractiveness,
    /// Sign-out attractiveness.
    pub beta0_h: f64,
    /// Relocation time sensitivity (1/minute).
    pub beta1: f64,
    /// Price sensitivity (1/currency).
    pub beta3: f64,
    /// Accepted on input and carried through save, never used by the model.
    pub beta2_unused: Option<f64>,
    /// Optional additive sign-out utility per node; absent nodes read as zero.
    pub signout_bonus: BTreeMap<NodeId, f64>,
}

/// One traveler origin-destination relation with its transit hub and the
/// exogenous times and costs of the three modes.
#[derive(Debug, Clone, PartialEq)]
pub struct OdSpec {
    pub r: NodeId,
    pub s: NodeId,
    pub demand: f64,
    pub hub: NodeId,
    pub drive_time: f64,
    pub hub_access_time: f64,
    pub transit_time: f64,
    pub transit_wait: f64,
    pub transit_fare: f64,
    pub drive_cost: f64,
    pub parking_time: f64,
    pub parking_cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelocationOverride {
    pub n: NodeId,
    pub r: NodeId,
    pub minutes: f64,
}

/// How driver relocation times `t_nr` are obtained.
#[derive(Debug, Clone, PartialEq)]
pub struct RelocationSpec {
    pub auto_shortest_path: bool,
    pub overrides: Vec<RelocationOverride>,
}

impl Default for RelocationSpec {
    fn default() -> Self {
        Self {
            auto_shortest_path: true,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub network: Network,
    pub ods: Vec<OdSpec>,
    pub relocation: RelocationSpec,
    /// Drivers signing in per period; absent nodes read as zero.
    pub signin: BTreeMap<NodeId, f64>,
    pub traveler: TravelerParams,
    pub driver: DriverParams,
}

impl Scenario {
    pub fn signin_at(&self, node: NodeId) -> f64 {
        self.signin.get(&node).copied().unwrap_or(0.0)
    }

    pub fn origins(&self) -> BTreeSet<NodeId> {
        self.ods.iter().map(|o| o.r).collect()
    }

    pub fn destinations(&self) -> BTreeSet<NodeId> {
        self.ods.iter().map(|o| o.s).collect()
    }

    pub fn hubs(&self) -> BTreeSet<NodeId> {
        self.ods.iter().map(|o| o.hub).collect()
    }

    /// Drop-off locations: destinations and hubs.
    pub fn dropoffs(&self) -> BTreeSet<NodeId> {
        self.destinations().union(&self.hubs()).copied().collect()
    }

    /// Indices of the ODs assigned to hub `n`.
    pub fn ods_with_hub(&self, n: NodeId) -> Vec<usize> {
        (0..self.ods.len()).filter(|&i| self.ods[i].hub == n).collect()
    }

    pub fn od_index(&self, r: NodeId, s: NodeId) -> Option<usize> {
        self.ods.iter().position(|o| o.r == r && o.s == s)
    }

    /// Driver OD set: every direct leg `(r,s)` and every hub leg `(r,h(r,s))`,
    /// deduplicated, in first-occurrence order.
    pub fn driver_ods(&self) -> Vec<(NodeId, NodeId)> {
        let mut seen = BTreeSet::new();
        self.ods
            .iter()
            .map(|o| (o.r, o.s))
            .chain(self.ods.iter().map(|o| (o.r, o.hub)))
            .filter(|leg| seen.insert(*leg))
            .collect()
    }

    /// Resolved relocation times, row-major over `network.nodes()` twice.
    /// `t_nn` is always zero; unreachable pairs are infinite.
    pub fn relocation_matrix(&self) -> Vec<f64> {
        let nodes = self.network.nodes();
        let n = nodes.len();
        let mut m = vec![f64::INFINITY; n * n];
        if self.relocation.auto_shortest_path {
            for (i, &from) in nodes.iter().enumerate() {
                let row = self
                    .network
                    .times_from(from)
                    .expect("node taken from the network");
                m[i * n..(i + 1) * n].copy_from_slice(&row);
            }
        }
        for o in &self.relocation.overrides {
            if let (Some(i), Some(j)) = (self.network.index_of(o.n), self.network.index_of(o.r)) {
                m[i * n + j] = o.minutes;
            }
        }
        for i in 0..n {
            m[i * n + i] = 0.0;
        }
        m
    }

    /// Names of input fields that were accepted but play no role.
    pub fn unused_fields(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.driver.beta2_unused.is_some() {
            out.push("driver_params.beta2");
        }
        out
    }
}

/// One failed scenario invariant, addressed by a JSON-pointer-style path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("schema violation at {}: {message}", if pointer.is_empty() { "document root" } else { pointer })]
    SchemaViolation { pointer: String, message: String },
    #[error("unknown builtin scenario {0:?}")]
    UnknownScenarioId(String),
    #[error("scenario failed validation: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

fn finite_nonneg(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

/// Checks every scenario invariant. An empty list means the scenario is
/// solvable; violations are reported, never thrown.
pub fn validate(sc: &Scenario) -> Vec<Violation> {
    let net = &sc.network;
    let mut out = Vec::new();

    if sc.ods.is_empty() {
        out.push(Violation::new("/ods", "at least one OD pair is required"));
    }
    for (i, od) in sc.ods.iter().enumerate() {
        let p = |f: &str| format!("/ods/{i}/{f}");
        let label = format!("OD ({}, {})", od.r, od.s);
        for (field, node) in [("r", od.r), ("s", od.s), ("hub", od.hub)] {
            if !net.contains(node) {
                out.push(Violation::new(
                    p(field),
                    format!("{label}: node {node} is not in the network"),
                ));
            }
        }
        if od.r == od.s {
            out.push(Violation::new(
                p("s"),
                format!("{label}: origin equals destination"),
            ));
        }
        if !(od.demand > 0.0 && od.demand.is_finite()) {
            out.push(Violation::new(
                p("demand"),
                format!("{label}: demand must be positive, got {}", od.demand),
            ));
        }
        for (field, v) in [
            ("drive_time", od.drive_time),
            ("hub_access_time", od.hub_access_time),
            ("transit_time", od.transit_time),
            ("transit_wait", od.transit_wait),
            ("transit_fare", od.transit_fare),
            ("drive_cost", od.drive_cost),
            ("parking_time", od.parking_time),
            ("parking_cost", od.parking_cost),
        ] {
            if !finite_nonneg(v) {
                out.push(Violation::new(
                    p(field),
                    format!("{label}: must be finite and >= 0, got {v}"),
                ));
            }
        }
    }

    // Each driver leg carries exactly one clearing constraint.
    let mut legs = BTreeMap::new();
    for (i, od) in sc.ods.iter().enumerate() {
        for (kind, leg) in [("direct", (od.r, od.s)), ("hub", (od.r, od.hub))] {
            if let Some(prev) = legs.insert(leg, (i, kind)) {
                out.push(Violation::new(
                    format!("/ods/{i}"),
                    format!(
                        "driver leg ({}, {}) of OD {i} ({kind}) duplicates the {} leg of OD {}",
                        leg.0, leg.1, prev.1, prev.0
                    ),
                ));
            }
        }
    }

    for (&node, &rate) in &sc.signin {
        if !net.contains(node) {
            out.push(Violation::new(
                format!("/signin/{node}"),
                "node is not in the network",
            ));
        }
        if !finite_nonneg(rate) {
            out.push(Violation::new(
                format!("/signin/{node}"),
                format!("rate must be >= 0, got {rate}"),
            ));
        }
    }
    let dropoffs = sc.dropoffs();
    for &node in net.nodes() {
        if !dropoffs.contains(&node) && !(sc.signin_at(node) > 0.0) {
            out.push(Violation::new(
                format!("/signin/{node}"),
                "a node with no traveler arrivals needs a positive sign-in rate",
            ));
        }
    }

    let tp = &sc.traveler;
    if !(tp.beta2 > 0.0 && tp.beta2.is_finite()) {
        out.push(Violation::new(
            "/traveler_params/beta2",
            format!("must be > 0, got {}", tp.beta2),
        ));
    }
    for (field, v) in [
        ("beta1/drive", tp.beta1.drive),
        ("beta1/ride", tp.beta1.ride),
        ("beta1/multimodal", tp.beta1.multimodal),
        ("beta1_wait", tp.beta1_wait),
    ] {
        if !finite_nonneg(v) {
            out.push(Violation::new(
                format!("/traveler_params/{field}"),
                format!("must be >= 0, got {v}"),
            ));
        }
    }
    for (field, v) in [
        ("drive", tp.beta0.drive),
        ("ride", tp.beta0.ride),
        ("multimodal", tp.beta0.multimodal),
    ] {
        if !v.is_finite() {
            out.push(Violation::new(
                format!("/traveler_params/beta0/{field}"),
                "must be finite",
            ));
        }
    }

    let dp = &sc.driver;
    if !(dp.beta3 > 0.0 && dp.beta3.is_finite()) {
        out.push(Violation::new(
            "/driver_params/beta3",
            format!("must be > 0, got {}", dp.beta3),
        ));
    }
    if !finite_nonneg(dp.beta1) {
        out.push(Violation::new(
            "/driver_params/beta1",
            format!("must be >= 0, got {}", dp.beta1),
        ));
    }
    if !dp.beta0_h.is_finite() {
        out.push(Violation::new("/driver_params/beta0_H", "must be finite"));
    }
    match &dp.beta0_r {
        OriginAttractiveness::Uniform(v) if !v.is_finite() => {
            out.push(Violation::new("/driver_params/beta0_r", "must be finite"));
        }
        OriginAttractiveness::PerNode(m) => {
            for (&node, v) in m {
                if !net.contains(node) || !v.is_finite() {
                    out.push(Violation::new(
                        format!("/driver_params/beta0_r/{node}"),
                        "unknown node or non-finite value",
                    ));
                }
            }
        }
        _ => {}
    }
    for (&node, v) in &dp.signout_bonus {
        if !net.contains(node) || !v.is_finite() {
            out.push(Violation::new(
                format!("/driver_params/signout_bonus/{node}"),
                "unknown node or non-finite value",
            ));
        }
    }

    for (k, o) in sc.relocation.overrides.iter().enumerate() {
        let p = format!("/relocation_times/overrides/{k}");
        if !net.contains(o.n) || !net.contains(o.r) {
            out.push(Violation::new(p.clone(), "override references an unknown node"));
        }
        if !finite_nonneg(o.minutes) {
            out.push(Violation::new(
                p.clone(),
                format!("minutes must be >= 0, got {}", o.minutes),
            ));
        }
        if o.n == o.r && o.minutes != 0.0 {
            out.push(Violation::new(
                p,
                "staying at the current node always takes 0 minutes",
            ));
        }
    }
    let times = sc.relocation_matrix();
    let n = net.nodes().len();
    for r in sc.origins() {
        let Some(j) = net.index_of(r) else { continue };
        for (i, &from) in net.nodes().iter().enumerate() {
            if !times[i * n + j].is_finite() {
                out.push(Violation::new(
                    "/relocation_times",
                    format!("no relocation time from node {from} to origin {r}"),
                ));
            }
        }
    }
    out
}
