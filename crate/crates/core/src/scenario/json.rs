//! Scenario documents. Loading walks the raw JSON tree so every type or sign
//! error carries the pointer of the offending value; saving emits a canonical
//! document (sorted keys, node maps keyed by id).

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use super::{
    DriverParams, ModeValues, OdSpec, OriginAttractiveness, RelocationOverride, RelocationSpec, Scenario,
    ScenarioError, TravelerParams,
};
use crate::netgraph::{Link, Network, NodeId};

fn violation(pointer: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::SchemaViolation {
        pointer: pointer.into(),
        message: message.into(),
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Sign {
    Any,
    NonNegative,
}

struct Obj<'a> {
    map: &'a Map<String, Value>,
    ptr: String,
}

impl<'a> Obj<'a> {
    fn new(v: &'a Value, ptr: String, allowed: &[&str]) -> Result<Self, ScenarioError> {
        let map = v
            .as_object()
            .ok_or_else(|| violation(ptr.as_str(), "expected an object"))?;
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(violation(format!("{ptr}/{k}"), "unknown field"));
        }
        Ok(Self { map, ptr })
    }

    fn at(&self, key: &str) -> String {
        format!("{}/{key}", self.ptr)
    }

    fn get(&self, key: &str) -> Result<&'a Value, ScenarioError> {
        self.map
            .get(key)
            .ok_or_else(|| violation(self.at(key), "required field is missing"))
    }

    fn num(&self, key: &str, sign: Sign) -> Result<f64, ScenarioError> {
        number(self.get(key)?, &self.at(key), sign)
    }

    fn opt_num(&self, key: &str, sign: Sign) -> Result<Option<f64>, ScenarioError> {
        self.map
            .get(key)
            .map(|v| number(v, &self.at(key), sign))
            .transpose()
    }

    fn node(&self, key: &str) -> Result<NodeId, ScenarioError> {
        node_id(self.get(key)?, &self.at(key))
    }

    fn child(&self, key: &str, allowed: &[&str]) -> Result<Obj<'a>, ScenarioError> {
        Obj::new(self.get(key)?, self.at(key), allowed)
    }

    fn array(&self, key: &str) -> Result<&'a [Value], ScenarioError> {
        self.get(key)?
            .as_array()
            .map(Vec::as_slice)
            .ok_or_else(|| violation(self.at(key), "expected an array"))
    }
}

fn number(v: &Value, ptr: &str, sign: Sign) -> Result<f64, ScenarioError> {
    let x = v
        .as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| violation(ptr, "expected a finite number"))?;
    if sign == Sign::NonNegative && x < 0.0 {
        return Err(violation(ptr, format!("must be >= 0, got {x}")));
    }
    Ok(x)
}

fn node_id(v: &Value, ptr: &str) -> Result<NodeId, ScenarioError> {
    v.as_u64()
        .filter(|&n| n >= 1)
        .and_then(|n| NodeId::try_from(n).ok())
        .ok_or_else(|| violation(ptr, "expected a node id (integer >= 1)"))
}

fn node_key(key: &str, ptr: &str) -> Result<NodeId, ScenarioError> {
    key.parse::<NodeId>()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| violation(ptr, "map key must be a node id"))
}

fn node_map(v: &Value, ptr: &str, sign: Sign) -> Result<BTreeMap<NodeId, f64>, ScenarioError> {
    let map = v
        .as_object()
        .ok_or_else(|| violation(ptr, "expected an object keyed by node id"))?;
    map.iter()
        .map(|(k, v)| {
            let p = format!("{ptr}/{k}");
            Ok((node_key(k, &p)?, number(v, &p, sign)?))
        })
        .collect()
}

fn mode_values(obj: &Obj, key: &str, sign: Sign) -> Result<ModeValues, ScenarioError> {
    let m = obj.child(key, &["drive", "ride", "multimodal"])?;
    Ok(ModeValues::new(
        m.num("drive", sign)?,
        m.num("ride", sign)?,
        m.num("multimodal", sign)?,
    ))
}

fn network(obj: &Obj) -> Result<Network, ScenarioError> {
    let net = obj.child("network", &["name", "nodes", "links"])?;
    let name = match net.map.get("name") {
        None => String::new(),
        Some(v) => v
            .as_str()
            .ok_or_else(|| violation(net.at("name"), "expected a string"))?
            .to_string(),
    };
    let nodes = net
        .array("nodes")?
        .iter()
        .enumerate()
        .map(|(i, v)| node_id(v, &format!("{}/{i}", net.at("nodes"))))
        .collect::<Result<Vec<_>, _>>()?;
    let links = net
        .array("links")?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let l = Obj::new(v, format!("{}/{i}", net.at("links")), &["from", "to", "fftt"])?;
            Ok(Link {
                from: l.node("from")?,
                to: l.node("to")?,
                fftt: l.num("fftt", Sign::NonNegative)?,
            })
        })
        .collect::<Result<Vec<_>, ScenarioError>>()?;
    Network::new(name, nodes, links).map_err(|e| violation(net.ptr.as_str(), e.to_string()))
}

const OD_FIELDS: [&str; 12] = [
    "r",
    "s",
    "demand",
    "hub",
    "drive_time",
    "hub_access_time",
    "transit_time",
    "transit_wait",
    "transit_fare",
    "drive_cost",
    "parking_time",
    "parking_cost",
];

fn od(v: &Value, ptr: String) -> Result<OdSpec, ScenarioError> {
    let o = Obj::new(v, ptr, &OD_FIELDS)?;
    let nn = |k| o.num(k, Sign::NonNegative);
    Ok(OdSpec {
        r: o.node("r")?,
        s: o.node("s")?,
        demand: o.num("demand", Sign::Any)?,
        hub: o.node("hub")?,
        drive_time: nn("drive_time")?,
        hub_access_time: nn("hub_access_time")?,
        transit_time: nn("transit_time")?,
        transit_wait: nn("transit_wait")?,
        transit_fare: nn("transit_fare")?,
        drive_cost: nn("drive_cost")?,
        parking_time: nn("parking_time")?,
        parking_cost: nn("parking_cost")?,
    })
}

fn relocation(root: &Obj) -> Result<RelocationSpec, ScenarioError> {
    let Some(v) = root.map.get("relocation_times") else {
        return Ok(RelocationSpec::default());
    };
    let rel = Obj::new(
        v,
        root.at("relocation_times"),
        &["auto_shortest_path", "overrides"],
    )?;
    let auto_shortest_path = match rel.map.get("auto_shortest_path") {
        None => true,
        Some(v) => v
            .as_bool()
            .ok_or_else(|| violation(rel.at("auto_shortest_path"), "expected a boolean"))?,
    };
    let overrides = match rel.map.get("overrides") {
        None => Vec::new(),
        Some(_) => rel
            .array("overrides")?
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let o = Obj::new(v, format!("{}/{i}", rel.at("overrides")), &["n", "r", "minutes"])?;
                Ok(RelocationOverride {
                    n: o.node("n")?,
                    r: o.node("r")?,
                    minutes: o.num("minutes", Sign::NonNegative)?,
                })
            })
            .collect::<Result<_, ScenarioError>>()?,
    };
    Ok(RelocationSpec {
        auto_shortest_path,
        overrides,
    })
}

fn traveler(root: &Obj) -> Result<TravelerParams, ScenarioError> {
    let t = root.child("traveler_params", &["beta0", "beta1", "beta1_wait", "beta2"])?;
    Ok(TravelerParams {
        beta0: mode_values(&t, "beta0", Sign::Any)?,
        beta1: mode_values(&t, "beta1", Sign::NonNegative)?,
        beta1_wait: t.num("beta1_wait", Sign::NonNegative)?,
        beta2: t.num("beta2", Sign::Any)?,
    })
}

fn driver(root: &Obj) -> Result<DriverParams, ScenarioError> {
    let d = root.child(
        "driver_params",
        &["beta0_r", "beta0_H", "beta1", "beta3", "beta2", "signout_bonus"],
    )?;
    let raw = d.get("beta0_r")?;
    let beta0_r = if raw.is_object() {
        OriginAttractiveness::PerNode(node_map(raw, &d.at("beta0_r"), Sign::Any)?)
    } else {
        OriginAttractiveness::Uniform(number(raw, &d.at("beta0_r"), Sign::Any)?)
    };
    let signout_bonus = match d.map.get("signout_bonus") {
        None => BTreeMap::new(),
        Some(v) => node_map(v, &d.at("signout_bonus"), Sign::Any)?,
    };
    Ok(DriverParams {
        beta0_r,
        beta0_h: d.num("beta0_H", Sign::Any)?,
        beta1: d.num("beta1", Sign::NonNegative)?,
        beta3: d.num("beta3", Sign::Any)?,
        beta2_unused: d.opt_num("beta2", Sign::Any)?,
        signout_bonus,
    })
}

/// Builds a scenario from an already parsed JSON tree.
pub fn from_value(doc: &Value) -> Result<Scenario, ScenarioError> {
    let root = Obj::new(
        doc,
        String::new(),
        &[
            "name",
            "network",
            "ods",
            "relocation_times",
            "signin",
            "traveler_params",
            "driver_params",
        ],
    )?;
    let name = root
        .get("name")?
        .as_str()
        .ok_or_else(|| violation("/name", "expected a string"))?
        .to_string();
    let network = network(&root)?;
    let ods = root
        .array("ods")?
        .iter()
        .enumerate()
        .map(|(i, v)| od(v, format!("/ods/{i}")))
        .collect::<Result<_, _>>()?;
    let signin = node_map(root.get("signin")?, "/signin", Sign::NonNegative)?;
    Ok(Scenario {
        name,
        network,
        ods,
        relocation: relocation(&root)?,
        signin,
        traveler: traveler(&root)?,
        driver: driver(&root)?,
    })
}

/// Parses a scenario document.
pub fn load(bytes: &[u8]) -> Result<Scenario, ScenarioError> {
    let doc: Value =
        serde_json::from_slice(bytes).map_err(|e| violation("", format!("invalid JSON: {e}")))?;
    from_value(&doc)
}

fn keyed(map: &BTreeMap<NodeId, f64>) -> Value {
    Value::Object(map.iter().map(|(k, v)| (k.to_string(), json!(v))).collect())
}

fn modes(m: &ModeValues) -> Value {
    json!({"drive": m.drive, "ride": m.ride, "multimodal": m.multimodal})
}

/// Canonical JSON tree of a scenario.
pub fn to_value(sc: &Scenario) -> Value {
    let links: Vec<Value> = sc
        .network
        .links()
        .iter()
        .map(|l| json!({"from": l.from, "to": l.to, "fftt": l.fftt}))
        .collect();
    let ods: Vec<Value> = sc
        .ods
        .iter()
        .map(|o| {
            json!({
                "r": o.r, "s": o.s, "demand": o.demand, "hub": o.hub,
                "drive_time": o.drive_time, "hub_access_time": o.hub_access_time,
                "transit_time": o.transit_time, "transit_wait": o.transit_wait,
                "transit_fare": o.transit_fare, "drive_cost": o.drive_cost,
                "parking_time": o.parking_time, "parking_cost": o.parking_cost,
            })
        })
        .collect();
    let overrides: Vec<Value> = sc
        .relocation
        .overrides
        .iter()
        .map(|o| json!({"n": o.n, "r": o.r, "minutes": o.minutes}))
        .collect();
    let tp = &sc.traveler;
    let dp = &sc.driver;
    let mut driver = json!({
        "beta0_r": match &dp.beta0_r {
            OriginAttractiveness::Uniform(v) => json!(v),
            OriginAttractiveness::PerNode(m) => keyed(m),
        },
        "beta0_H": dp.beta0_h,
        "beta1": dp.beta1,
        "beta3": dp.beta3,
    });
    if let Some(b) = dp.beta2_unused {
        driver["beta2"] = json!(b);
    }
    if !dp.signout_bonus.is_empty() {
        driver["signout_bonus"] = keyed(&dp.signout_bonus);
    }
    json!({
        "name": sc.name,
        "network": {"name": sc.network.name(), "nodes": sc.network.nodes(), "links": links},
        "ods": ods,
        "relocation_times": {
            "auto_shortest_path": sc.relocation.auto_shortest_path,
            "overrides": overrides,
        },
        "signin": keyed(&sc.signin),
        "traveler_params": {
            "beta0": modes(&tp.beta0),
            "beta1": modes(&tp.beta1),
            "beta1_wait": tp.beta1_wait,
            "beta2": tp.beta2,
        },
        "driver_params": driver,
    })
}

/// Serializes a scenario as pretty-printed canonical JSON.
pub fn save(sc: &Scenario) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&to_value(sc)).expect("JSON values always serialize");
    out.push(b'\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{builtin_5node, builtin_sioux};

    fn pointer_of(e: ScenarioError) -> String {
        match e {
            ScenarioError::SchemaViolation { pointer, .. } => pointer,
            other => panic!("expected a schema violation, got {other:?}"),
        }
    }

    #[test]
    fn round_trips() {
        let mut sc = builtin_5node();
        sc.driver.beta2_unused = Some(0.2);
        sc.driver.signout_bonus.insert(3, 1.5);
        sc.relocation.overrides.push(RelocationOverride {
            n: 5,
            r: 1,
            minutes: 12.5,
        });
        assert_eq!(load(&save(&sc)).unwrap(), sc);
        let sf = builtin_sioux(3).unwrap();
        assert_eq!(load(&save(&sf)).unwrap(), sf);
    }

    #[test]
    fn save_is_canonical() {
        let bytes = save(&builtin_5node());
        let again = save(&load(&bytes).unwrap());
        assert_eq!(bytes, again);
    }

    #[test]
    fn missing_beta2() {
        let mut doc = to_value(&builtin_5node());
        doc["traveler_params"].as_object_mut().unwrap().remove("beta2");
        assert_eq!(
            pointer_of(from_value(&doc).unwrap_err()),
            "/traveler_params/beta2"
        );
    }

    #[test]
    fn negative_fare() {
        let mut doc = to_value(&builtin_5node());
        doc["ods"][1]["transit_fare"] = json!(-2.0);
        assert_eq!(pointer_of(from_value(&doc).unwrap_err()), "/ods/1/transit_fare");
    }

    #[test]
    fn unknown_field_and_bad_node() {
        let mut doc = to_value(&builtin_5node());
        doc["ods"][0]["colour"] = json!("red");
        assert_eq!(pointer_of(from_value(&doc).unwrap_err()), "/ods/0/colour");
        let mut doc = to_value(&builtin_5node());
        doc["ods"][0]["hub"] = json!(0);
        assert_eq!(pointer_of(from_value(&doc).unwrap_err()), "/ods/0/hub");
        let mut doc = to_value(&builtin_5node());
        doc["signin"]["x"] = json!(1.0);
        assert_eq!(pointer_of(from_value(&doc).unwrap_err()), "/signin/x");
    }

    #[test]
    fn scalar_or_map_origin_attractiveness() {
        let mut doc = to_value(&builtin_5node());
        doc["driver_params"]["beta0_r"] = json!({"1": 0.5});
        let sc = from_value(&doc).unwrap();
        assert_eq!(sc.driver.beta0_r.at(1), 0.5);
        assert_eq!(sc.driver.beta0_r.at(2), 0.0);
    }

    #[test]
    fn invalid_json_is_reported_at_root() {
        assert_eq!(pointer_of(load(b"{").unwrap_err()), "");
    }
}
