//! Builtin instances: the symmetric 5-node network and Sioux Falls with
//! 2, 3 or 7 transit hubs.
//!
//! Link times, monetary costs and sign-in rates are calibration values,
//! listed here and overridable through a scenario file.

use std::collections::BTreeMap;

use super::{
    DriverParams, ModeValues, OdSpec, OriginAttractiveness, RelocationSpec, Scenario, ScenarioError,
    TravelerParams,
};
use crate::netgraph::{parse_tntp, shortest_time, Link, Network, NodeId};

/// Vendored Sioux Falls network in TNTP format.
pub const SIOUX_FALLS_TNTP: &str = include_str!("../../data/SiouxFalls_net.tntp");

const SIGNIN: f64 = 20.0;
const DRIVE_COST: f64 = 4.0;
const PARKING_TIME: f64 = 2.0;
const PARKING_COST: f64 = 2.0;
const TRANSIT_WAIT: f64 = 5.0;
const TRANSIT_FARE: f64 = 2.0;

fn traveler_defaults() -> TravelerParams {
    TravelerParams {
        beta0: ModeValues::new(4.0, 2.0, 1.0),
        beta1: ModeValues::new(0.3, 0.2, 0.1),
        beta1_wait: 0.2,
        beta2: 1.0,
    }
}

fn driver_defaults() -> DriverParams {
    DriverParams {
        beta0_r: OriginAttractiveness::Uniform(0.0),
        beta0_h: 2.0,
        beta1: 0.3,
        beta3: 1.0,
        beta2_unused: None,
        signout_bonus: BTreeMap::new(),
    }
}

fn uniform_signin(net: &Network) -> BTreeMap<NodeId, f64> {
    net.nodes().iter().map(|&n| (n, SIGNIN)).collect()
}

/// Five zones: origins 1 and 2 serve each other, 3 and 4 are the transit hubs
/// of OD (1,2) and (2,1), and 5 is a pure supply node. Swapping 1↔2 and 3↔4
/// maps the instance onto itself.
pub fn builtin_5node() -> Scenario {
    let links = [
        (1, 2, 10.0),
        (2, 1, 10.0),
        (1, 3, 5.0),
        (3, 2, 20.0),
        (2, 4, 5.0),
        (4, 1, 20.0),
        (3, 1, 10.0),
        (4, 2, 10.0),
        (5, 1, 15.0),
        (5, 2, 15.0),
    ]
    .into_iter()
    .map(|(from, to, fftt)| Link { from, to, fftt })
    .collect();
    let network =
        Network::new("five-node", (1..=5).collect(), links).expect("builtin network is well formed");
    let od = |r, s, hub| OdSpec {
        r,
        s,
        demand: 100.0,
        hub,
        drive_time: 10.0,
        hub_access_time: 5.0,
        transit_time: 40.0,
        transit_wait: TRANSIT_WAIT,
        transit_fare: TRANSIT_FARE,
        drive_cost: DRIVE_COST,
        parking_time: PARKING_TIME,
        parking_cost: PARKING_COST,
    };
    Scenario {
        name: "5node".into(),
        signin: uniform_signin(&network),
        network,
        ods: vec![od(1, 2, 3), od(2, 1, 4)],
        relocation: RelocationSpec::default(),
        traveler: traveler_defaults(),
        driver: driver_defaults(),
    }
}

pub fn sioux_falls_network() -> Network {
    let mut net = parse_tntp(SIOUX_FALLS_TNTP.as_bytes()).expect("vendored fixture parses");
    net.set_name("sioux-falls");
    net
}

const SIOUX_ODS: [(NodeId, NodeId, f64); 7] = [
    (1, 13, 500.0),
    (4, 24, 200.0),
    (5, 22, 200.0),
    (6, 21, 100.0),
    (7, 20, 500.0),
    (19, 5, 100.0),
    (23, 9, 500.0),
];

const SIOUX_HUBS: [[NodeId; 7]; 3] = [
    [10, 10, 10, 10, 10, 15, 15],
    [11, 11, 11, 16, 16, 15, 15],
    [12, 11, 10, 16, 18, 15, 22],
];

/// Sioux Falls with hub layout 1 (2 hubs), 2 (3 hubs) or 3 (7 hubs). Car and
/// ride times come from free-flow shortest paths; transit runs at twice the
/// free-flow time from hub to destination.
pub fn builtin_sioux(hubs: u8) -> Result<Scenario, ScenarioError> {
    let layout = match hubs {
        1..=3 => &SIOUX_HUBS[usize::from(hubs) - 1],
        _ => return Err(ScenarioError::UnknownScenarioId(format!("sioux{hubs}"))),
    };
    let network = sioux_falls_network();
    let sp = |a, b| shortest_time(&network, a, b).expect("Sioux Falls is strongly connected");
    let ods = SIOUX_ODS
        .iter()
        .zip(layout)
        .map(|(&(r, s, demand), &hub)| OdSpec {
            r,
            s,
            demand,
            hub,
            drive_time: sp(r, s),
            hub_access_time: sp(r, hub),
            transit_time: 2.0 * sp(hub, s),
            transit_wait: TRANSIT_WAIT,
            transit_fare: TRANSIT_FARE,
            drive_cost: DRIVE_COST,
            parking_time: PARKING_TIME,
            parking_cost: PARKING_COST,
        })
        .collect();
    Ok(Scenario {
        name: format!("sioux{hubs}"),
        signin: uniform_signin(&network),
        network,
        ods,
        relocation: RelocationSpec::default(),
        traveler: traveler_defaults(),
        driver: driver_defaults(),
    })
}

/// Three-zone instance with one OD (1,2) through hub 3: small enough for
/// brute-force dual search. Zone 1 receives no drop-offs.
pub fn micro_scenario(direct: f64, hub_access: f64, demand: f64, signin: [f64; 3], transit: f64) -> Scenario {
    let links = [
        (1, 2, direct),
        (2, 1, direct),
        (1, 3, hub_access),
        (3, 1, hub_access),
        (3, 2, 8.0),
        (2, 3, 8.0),
    ]
    .into_iter()
    .map(|(from, to, fftt)| Link { from, to, fftt })
    .collect();
    let network = Network::new("micro", vec![1, 2, 3], links).expect("micro network is well formed");
    let sp = |a, b| shortest_time(&network, a, b).expect("micro network is strongly connected");
    let od = OdSpec {
        r: 1,
        s: 2,
        demand,
        hub: 3,
        drive_time: sp(1, 2),
        hub_access_time: sp(1, 3),
        transit_time: transit,
        transit_wait: TRANSIT_WAIT,
        transit_fare: TRANSIT_FARE,
        drive_cost: DRIVE_COST,
        parking_time: PARKING_TIME,
        parking_cost: PARKING_COST,
    };
    Scenario {
        name: "micro".into(),
        signin: [1, 2, 3].into_iter().zip(signin).collect(),
        network,
        ods: vec![od],
        relocation: RelocationSpec::default(),
        traveler: traveler_defaults(),
        driver: driver_defaults(),
    }
}

/// Three micro variants differing in times, demand and sign-ins.
pub fn micro_instances() -> Vec<Scenario> {
    vec![
        micro_scenario(10.0, 4.0, 50.0, [10.0, 10.0, 10.0], 15.0),
        micro_scenario(12.0, 3.0, 80.0, [15.0, 5.0, 8.0], 15.0),
        micro_scenario(10.0, 4.0, 30.0, [10.0, 10.0, 10.0], 10.0),
    ]
}

/// Resolves `5node`, `sioux1`, `sioux2` or `sioux3`.
pub fn by_id(id: &str) -> Result<Scenario, ScenarioError> {
    match id {
        "5node" => Ok(builtin_5node()),
        "sioux1" => builtin_sioux(1),
        "sioux2" => builtin_sioux(2),
        "sioux3" => builtin_sioux(3),
        other => Err(ScenarioError::UnknownScenarioId(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn five_node_stated_values() {
        let sc = builtin_5node();
        assert_eq!(sc.ods[0].demand, 100.0);
        assert_eq!(sc.signin_at(5), 20.0);
        assert_eq!(sc.ods[0].transit_time, 40.0);
        assert_eq!(shortest_time(&sc.network, 3, 2).unwrap(), 20.0);
        assert_eq!(sc.ods[0].drive_time, shortest_time(&sc.network, 1, 2).unwrap());
        assert_eq!(
            sc.ods[0].hub_access_time,
            shortest_time(&sc.network, 1, 3).unwrap()
        );
    }

    #[test]
    fn five_node_relabel_symmetry() {
        let sc = builtin_5node();
        let swap = |n: NodeId| match n {
            1 => 2,
            2 => 1,
            3 => 4,
            4 => 3,
            x => x,
        };
        let links: BTreeSet<_> = sc
            .network
            .links()
            .iter()
            .map(|l| (l.from, l.to, l.fftt.to_bits()))
            .collect();
        let mapped: BTreeSet<_> = sc
            .network
            .links()
            .iter()
            .map(|l| (swap(l.from), swap(l.to), l.fftt.to_bits()))
            .collect();
        assert_eq!(links, mapped);
        let mut a = sc.ods[0].clone();
        a.r = swap(a.r);
        a.s = swap(a.s);
        a.hub = swap(a.hub);
        assert_eq!(a, sc.ods[1]);
    }

    #[test]
    fn sioux_table_mapping() {
        let s2 = builtin_sioux(2).unwrap();
        let od = &s2.ods[s2.od_index(7, 20).unwrap()];
        assert_eq!(od.hub, 16);
        assert_eq!(builtin_sioux(1).unwrap().hubs(), BTreeSet::from([10, 15]));
        let s3 = builtin_sioux(3).unwrap();
        assert_eq!(s3.ods[s3.od_index(23, 9).unwrap()].hub, 22);
        assert_eq!(s3.hubs().len(), 7);
        assert_eq!(builtin_sioux(2).unwrap().hubs().len(), 3);
    }

    #[test]
    fn sioux_demands_and_sets() {
        let sc = builtin_sioux(1).unwrap();
        let origins: Vec<_> = sc.ods.iter().map(|o| o.r).collect();
        let dests: Vec<_> = sc.ods.iter().map(|o| o.s).collect();
        assert_eq!(origins, [1, 4, 5, 6, 7, 19, 23]);
        assert_eq!(dests, [13, 24, 22, 21, 20, 5, 9]);
        let total: f64 = sc.ods.iter().map(|o| o.demand).sum();
        assert_eq!(total, 2100.0);
    }

    #[test]
    fn unknown_ids() {
        assert!(matches!(
            builtin_sioux(4),
            Err(ScenarioError::UnknownScenarioId(_))
        ));
        assert!(matches!(
            by_id("sioux9"),
            Err(ScenarioError::UnknownScenarioId(_))
        ));
        assert_eq!(by_id("5node").unwrap(), builtin_5node());
    }
}
