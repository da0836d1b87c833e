//! Directed road graph with free-flow link times.
//!
//! Shortest paths use a single label-setting pass per origin. Among equal
//! tentative labels the node with the smaller id is settled first, so every
//! query is reproducible bit for bit.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Zone identifier as used in network files (1-based).
pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub from: NodeId,
    pub to: NodeId,
    /// Free-flow travel time in minutes.
    pub fftt: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("no path from {from} to {to}")]
    NoPath { from: NodeId, to: NodeId },
    #[error("self-loop on node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate link ({0}, {1})")]
    DuplicateLink(NodeId, NodeId),
    #[error("duplicate node {0}")]
    DuplicateNode(NodeId),
    #[error("link ({from}, {to}) has non-positive free-flow time {fftt}")]
    NonPositiveLinkTime { from: NodeId, to: NodeId, fftt: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TntpError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("declared {declared} links but found {found}")]
    LinkCountMismatch { declared: usize, found: usize },
    #[error("line {line}: non-positive free-flow time {value}")]
    NonPositiveTime { line: usize, value: f64 },
    #[error("line {line}: {reason}")]
    UnparsableRow { line: usize, reason: String },
    #[error(transparent)]
    Network(#[from] NetError),
}

/// Immutable directed graph. Construct through [`Network::new`], which
/// enforces the structural invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    name: String,
    nodes: Vec<NodeId>,
    links: Vec<Link>,
    index: BTreeMap<NodeId, usize>,
    // outgoing (head index, time), sorted by head id
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl Network {
    pub fn new(name: impl Into<String>, nodes: Vec<NodeId>, links: Vec<Link>) -> Result<Self, NetError> {
        let mut index = BTreeMap::new();
        for (i, &n) in nodes.iter().enumerate() {
            if index.insert(n, i).is_some() {
                return Err(NetError::DuplicateNode(n));
            }
        }
        let mut adjacency = vec![Vec::new(); nodes.len()];
        let mut seen = BTreeMap::new();
        for link in &links {
            let from = *index.get(&link.from).ok_or(NetError::UnknownNode(link.from))?;
            let to = *index.get(&link.to).ok_or(NetError::UnknownNode(link.to))?;
            if link.from == link.to {
                return Err(NetError::SelfLoop(link.from));
            }
            if !(link.fftt > 0.0 && link.fftt.is_finite()) {
                return Err(NetError::NonPositiveLinkTime {
                    from: link.from,
                    to: link.to,
                    fftt: link.fftt,
                });
            }
            if seen.insert((link.from, link.to), ()).is_some() {
                return Err(NetError::DuplicateLink(link.from, link.to));
            }
            adjacency[from].push((to, link.fftt));
        }
        for out in &mut adjacency {
            out.sort_by_key(|&(head, _)| nodes[head]);
        }
        Ok(Self {
            name: name.into(),
            nodes,
            links,
            index,
            adjacency,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.index.contains_key(&node)
    }

    /// Position of `node` in [`Network::nodes`].
    pub fn index_of(&self, node: NodeId) -> Option<usize> {
        self.index.get(&node).copied()
    }

    /// Minimal free-flow times from `origin` to every node, in node order.
    /// Unreachable nodes are `f64::INFINITY`.
    pub fn times_from(&self, origin: NodeId) -> Result<Vec<f64>, NetError> {
        let src = self.index_of(origin).ok_or(NetError::UnknownNode(origin))?;
        Ok(self.dijkstra(src))
    }

    fn dijkstra(&self, src: usize) -> Vec<f64> {
        let mut dist = vec![f64::INFINITY; self.nodes.len()];
        let mut settled = vec![false; self.nodes.len()];
        let mut heap = BinaryHeap::new();
        dist[src] = 0.0;
        heap.push(Label {
            time: 0.0,
            id: self.nodes[src],
            idx: src,
        });
        while let Some(Label { time, idx, .. }) = heap.pop() {
            if settled[idx] {
                continue;
            }
            settled[idx] = true;
            for &(head, t) in &self.adjacency[idx] {
                let cand = time + t;
                if cand < dist[head] {
                    dist[head] = cand;
                    heap.push(Label {
                        time: cand,
                        id: self.nodes[head],
                        idx: head,
                    });
                }
            }
        }
        dist
    }
}

struct Label {
    time: f64,
    id: NodeId,
    idx: usize,
}

impl PartialEq for Label {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Label {}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Label {
    // BinaryHeap is a max-heap: smallest time, then smallest id, pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.id.cmp(&self.id))
    }
}

/// Minimum free-flow time from `origin` to `dest` in minutes.
pub fn shortest_time(net: &Network, origin: NodeId, dest: NodeId) -> Result<f64, NetError> {
    let d = net.index_of(dest).ok_or(NetError::UnknownNode(dest))?;
    let t = net.times_from(origin)?[d];
    if t.is_finite() {
        Ok(t)
    } else {
        Err(NetError::NoPath {
            from: origin,
            to: dest,
        })
    }
}

/// Origin-by-destination shortest times for a node subset.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMatrix {
    origins: Vec<NodeId>,
    dests: Vec<NodeId>,
    // row-major, INFINITY marks an unreachable pair
    minutes: Vec<f64>,
}

impl TimeMatrix {
    pub fn origins(&self) -> &[NodeId] {
        &self.origins
    }

    pub fn dests(&self) -> &[NodeId] {
        &self.dests
    }

    /// `None` when either node is outside the matrix or the pair is unreachable.
    pub fn get(&self, origin: NodeId, dest: NodeId) -> Option<f64> {
        let i = self.origins.iter().position(|&o| o == origin)?;
        let j = self.dests.iter().position(|&d| d == dest)?;
        Some(self.at(i, j)).filter(|t| t.is_finite())
    }

    /// Raw entry by position; may be infinite.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.minutes[i * self.dests.len() + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.minutes.chunks(self.dests.len().max(1))
    }
}

pub fn time_matrix(net: &Network, origins: &[NodeId], dests: &[NodeId]) -> Result<TimeMatrix, NetError> {
    let dest_idx = dests
        .iter()
        .map(|&d| net.index_of(d).ok_or(NetError::UnknownNode(d)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut minutes = Vec::with_capacity(origins.len() * dests.len());
    for &o in origins {
        let row = net.times_from(o)?;
        minutes.extend(dest_idx.iter().map(|&j| row[j]));
    }
    Ok(TimeMatrix {
        origins: origins.to_vec(),
        dests: dests.to_vec(),
        minutes,
    })
}

/// Parses a TNTP `_net` file. Only `init_node`, `term_node` and
/// `free_flow_time` (field 5) are kept.
pub fn parse_tntp(text: &[u8]) -> Result<Network, TntpError> {
    let text = std::str::from_utf8(text)
        .map_err(|e| TntpError::MalformedHeader(format!("input is not UTF-8: {e}")))?;
    let mut lines = text.lines().enumerate();

    let mut declared_nodes = None;
    let mut declared_links = None;
    let mut ended = false;
    for (_, raw) in lines.by_ref() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        if line.starts_with("<END OF METADATA>") {
            ended = true;
            break;
        }
        let Some(rest) = line.strip_prefix('<') else {
            return Err(TntpError::MalformedHeader(format!(
                "unexpected line before <END OF METADATA>: {line}"
            )));
        };
        let Some((key, value)) = rest.split_once('>') else {
            return Err(TntpError::MalformedHeader(format!("unterminated tag: {line}")));
        };
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| TntpError::MalformedHeader(format!("<{key}> has value {v:?}")))
        };
        match key.trim() {
            "NUMBER OF NODES" => declared_nodes = Some(parse(value)?),
            "NUMBER OF LINKS" => declared_links = Some(parse(value)?),
            _ => {}
        }
    }
    if !ended {
        return Err(TntpError::MalformedHeader("missing <END OF METADATA>".into()));
    }
    let n_nodes =
        declared_nodes.ok_or_else(|| TntpError::MalformedHeader("missing <NUMBER OF NODES>".into()))?;
    let n_links =
        declared_links.ok_or_else(|| TntpError::MalformedHeader("missing <NUMBER OF LINKS>".into()))?;

    let mut links = Vec::with_capacity(n_links);
    for (i, raw) in lines {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('~') {
            continue;
        }
        let Some(body) = line.strip_suffix(';') else {
            return Err(TntpError::UnparsableRow {
                line: line_no,
                reason: "row is not terminated by ';'".into(),
            });
        };
        let fields: Vec<&str> = body.split_whitespace().collect();
        if fields.len() < 5 {
            return Err(TntpError::UnparsableRow {
                line: line_no,
                reason: format!("expected at least 5 fields, found {}", fields.len()),
            });
        }
        let node = |k: usize| {
            fields[k].parse::<NodeId>().map_err(|_| TntpError::UnparsableRow {
                line: line_no,
                reason: format!("field {} is not a node id: {:?}", k + 1, fields[k]),
            })
        };
        let from = node(0)?;
        let to = node(1)?;
        let fftt: f64 = fields[4].parse().map_err(|_| TntpError::UnparsableRow {
            line: line_no,
            reason: format!("free_flow_time is not a number: {:?}", fields[4]),
        })?;
        if !(fftt > 0.0) {
            return Err(TntpError::NonPositiveTime {
                line: line_no,
                value: fftt,
            });
        }
        for id in [from, to] {
            if id == 0 || id as usize > n_nodes {
                return Err(TntpError::UnparsableRow {
                    line: line_no,
                    reason: format!("node {id} outside 1..={n_nodes}"),
                });
            }
        }
        links.push(Link { from, to, fftt });
    }
    if links.len() != n_links {
        return Err(TntpError::LinkCountMismatch {
            declared: n_links,
            found: links.len(),
        });
    }
    let nodes = (1..=n_nodes as NodeId).collect();
    Ok(Network::new("tntp", nodes, links)?)
}

/// Writes a TNTP `_net` file. Fields the model does not carry are emitted
/// as neutral placeholders; `length` repeats the free-flow time.
pub fn to_tntp(net: &Network) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "<NUMBER OF ZONES> {}", net.nodes().len());
    let _ = writeln!(out, "<NUMBER OF NODES> {}", net.nodes().len());
    let _ = writeln!(out, "<FIRST THRU NODE> 1");
    let _ = writeln!(out, "<NUMBER OF LINKS> {}", net.links().len());
    let _ = writeln!(out, "<END OF METADATA>");
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;"
    );
    for l in net.links() {
        let _ = writeln!(
            out,
            "\t{}\t{}\t0\t{}\t{}\t0.15\t4\t0\t0\t1\t;",
            l.from, l.to, l.fftt, l.fftt
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line3() -> Network {
        Network::new(
            "line",
            vec![1, 2, 3],
            vec![
                Link {
                    from: 1,
                    to: 2,
                    fftt: 2.0,
                },
                Link {
                    from: 2,
                    to: 3,
                    fftt: 3.0,
                },
                Link {
                    from: 1,
                    to: 3,
                    fftt: 9.0,
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn identity_and_indirect_paths() {
        let net = line3();
        assert_eq!(shortest_time(&net, 2, 2).unwrap(), 0.0);
        assert_eq!(shortest_time(&net, 1, 3).unwrap(), 5.0);
    }

    #[test]
    fn unreachable_and_unknown() {
        let net = line3();
        assert_eq!(
            shortest_time(&net, 3, 1),
            Err(NetError::NoPath { from: 3, to: 1 })
        );
        assert_eq!(shortest_time(&net, 7, 1), Err(NetError::UnknownNode(7)));
        let m = time_matrix(&net, &[3], &[1, 3]).unwrap();
        assert_eq!(m.get(3, 1), None);
        assert!(m.at(0, 0).is_infinite());
        assert_eq!(m.get(3, 3), Some(0.0));
    }

    #[test]
    fn construction_rejects_bad_graphs() {
        let l = |from, to, fftt| Link { from, to, fftt };
        assert_eq!(
            Network::new("x", vec![1, 2], vec![l(1, 1, 1.0)]).unwrap_err(),
            NetError::SelfLoop(1)
        );
        assert_eq!(
            Network::new("x", vec![1, 2], vec![l(1, 2, 1.0), l(1, 2, 2.0)]).unwrap_err(),
            NetError::DuplicateLink(1, 2)
        );
        assert_eq!(
            Network::new("x", vec![1, 2], vec![l(1, 3, 1.0)]).unwrap_err(),
            NetError::UnknownNode(3)
        );
        assert!(matches!(
            Network::new("x", vec![1, 2], vec![l(1, 2, 0.0)]).unwrap_err(),
            NetError::NonPositiveLinkTime { .. }
        ));
    }

    const TWO_LINKS: &str = "<NUMBER OF NODES> 2\n<NUMBER OF LINKS> 2\n<END OF METADATA>\n\
         ~ init term cap len fftt ;\n\t1\t2\t100\t3\t3\t0.15\t4\t0\t0\t1\t;\n\t2\t1\t100\t3\t4.5\t0.15\t4\t0\t0\t1\t;\n";

    #[test]
    fn parses_minimal_file() {
        let net = parse_tntp(TWO_LINKS.as_bytes()).unwrap();
        assert_eq!(net.nodes(), &[1, 2]);
        assert_eq!(net.links()[1].fftt, 4.5);
    }

    #[test]
    fn link_count_mismatch() {
        let text = TWO_LINKS.replace("<NUMBER OF LINKS> 2", "<NUMBER OF LINKS> 1");
        assert_eq!(
            parse_tntp(text.as_bytes()).unwrap_err(),
            TntpError::LinkCountMismatch {
                declared: 1,
                found: 2
            }
        );
        let text = format!("{TWO_LINKS}\t1\t1\t1\t1\t1\t1\t1\t1\t1\t1\t;\n")
            .replace("<NUMBER OF LINKS> 2", "<NUMBER OF LINKS> 2");
        // third row is a self-loop but the count check fires first
        assert!(matches!(
            parse_tntp(text.as_bytes()).unwrap_err(),
            TntpError::LinkCountMismatch {
                declared: 2,
                found: 3
            }
        ));
    }

    #[test]
    fn zero_time_row() {
        let text = TWO_LINKS.replace("\t3\t3\t0.15", "\t3\t0\t0.15");
        assert_eq!(
            parse_tntp(text.as_bytes()).unwrap_err(),
            TntpError::NonPositiveTime { line: 5, value: 0.0 }
        );
    }

    #[test]
    fn malformed_inputs() {
        let no_end = "<NUMBER OF NODES> 2\n<NUMBER OF LINKS> 0\n";
        assert!(matches!(
            parse_tntp(no_end.as_bytes()),
            Err(TntpError::MalformedHeader(_))
        ));
        let no_nodes = "<NUMBER OF LINKS> 0\n<END OF METADATA>\n";
        assert!(matches!(
            parse_tntp(no_nodes.as_bytes()),
            Err(TntpError::MalformedHeader(_))
        ));
        let bad_row = TWO_LINKS.replace("\t2\t1\t100", "\t2\tx\t100");
        assert!(matches!(
            parse_tntp(bad_row.as_bytes()),
            Err(TntpError::UnparsableRow { line: 6, .. })
        ));
        let unterminated = TWO_LINKS.replace("1\t;\n\t2", "1\n\t2");
        assert!(matches!(
            parse_tntp(unterminated.as_bytes()),
            Err(TntpError::UnparsableRow { line: 5, .. })
        ));
    }

    #[test]
    fn tie_break_is_deterministic() {
        // two equal-length routes 1->2->4 and 1->3->4
        let l = |from, to, fftt| Link { from, to, fftt };
        let net = Network::new(
            "diamond",
            vec![1, 2, 3, 4],
            vec![l(1, 2, 1.0), l(1, 3, 1.0), l(2, 4, 1.0), l(3, 4, 1.0)],
        )
        .unwrap();
        let a = net.times_from(1).unwrap();
        let b = net.times_from(1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[3], 2.0);
    }
}
