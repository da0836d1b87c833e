//! Seeded random instances for property tests.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    validate, DriverParams, ModeValues, OdSpec, OriginAttractiveness, RelocationSpec, Scenario,
    TravelerParams,
};
use crate::netgraph::{Link, Network, NodeId};

pub const COEFFICIENT_RANGE: (f64, f64) = (0.05, 5.0);
pub const TIME_RANGE: (f64, f64) = (1.0, 60.0);

fn draw(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    rng.gen_range(range.0..=range.1)
}

fn network(rng: &mut ChaCha8Rng, n: NodeId) -> Network {
    let mut pairs = BTreeMap::new();
    // a bidirectional ring keeps every node reachable
    for a in 1..=n {
        let b = a % n + 1;
        pairs.insert((a, b), ());
        pairs.insert((b, a), ());
    }
    for _ in 0..n {
        let a = rng.gen_range(1..=n);
        let b = rng.gen_range(1..=n);
        if a != b {
            pairs.insert((a, b), ());
        }
    }
    let links = pairs
        .into_keys()
        .map(|(from, to)| Link {
            from,
            to,
            fftt: draw(rng, TIME_RANGE),
        })
        .collect();
    Network::new("random", (1..=n).collect(), links).expect("generated links are well formed")
}

fn candidate(rng: &mut ChaCha8Rng, seed: u64) -> Scenario {
    let n: NodeId = rng.gen_range(4..=6);
    let network = network(rng, n);
    let nodes: Vec<NodeId> = (1..=n).collect();
    let n_ods = rng.gen_range(1..=3);
    let mut ods = Vec::new();
    while ods.len() < n_ods {
        let mut pick = nodes.clone();
        pick.shuffle(rng);
        let (r, s, hub) = (pick[0], pick[1], pick[2]);
        let clash = ods
            .iter()
            .any(|o: &OdSpec| o.r == r && (o.s == s || o.hub == s || o.s == hub || o.hub == hub));
        if clash {
            continue;
        }
        ods.push(OdSpec {
            r,
            s,
            demand: rng.gen_range(10.0..=200.0),
            hub,
            drive_time: draw(rng, TIME_RANGE),
            hub_access_time: draw(rng, TIME_RANGE),
            transit_time: draw(rng, TIME_RANGE),
            transit_wait: draw(rng, TIME_RANGE),
            transit_fare: rng.gen_range(0.0..=10.0),
            drive_cost: rng.gen_range(0.0..=10.0),
            parking_time: draw(rng, TIME_RANGE),
            parking_cost: rng.gen_range(0.0..=10.0),
        });
    }
    let signin = nodes.iter().map(|&k| (k, rng.gen_range(1.0..=30.0))).collect();
    let mut c = || draw(rng, COEFFICIENT_RANGE);
    let traveler = TravelerParams {
        beta0: ModeValues::new(c(), c(), c()),
        beta1: ModeValues::new(c(), c(), c()),
        beta1_wait: c(),
        beta2: c(),
    };
    let driver = DriverParams {
        beta0_r: OriginAttractiveness::Uniform(c()),
        beta0_h: c(),
        beta1: c(),
        beta3: c(),
        beta2_unused: None,
        signout_bonus: BTreeMap::new(),
    };
    Scenario {
        name: format!("random-{seed}"),
        network,
        ods,
        relocation: RelocationSpec::default(),
        signin,
        traveler,
        driver,
    }
}

/// Random valid scenario: 4 to 6 nodes, 1 to 3 ODs, every behavioral
/// coefficient in [`COEFFICIENT_RANGE`] and every time in [`TIME_RANGE`].
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let sc = candidate(&mut rng, seed);
        if validate(&sc).is_empty() {
            return sc;
        }
    }
}
