//! Random instances and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use qrs_core::routing::CostWeights;
use qrs_core::telemetry::{LinkTelemetry, TelemetrySnapshot};
use qrs_core::topology::{
    build_topology, Flow, FlowId, LinkSpec, NodeId, NodeKind, NodeSpec, Path, Topology,
    TopologyDescription,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PACKET_BITS: f64 = 12_000.0;

/// Connected graph of `2..=max_nodes` nodes: a random spanning tree plus extra cables.
/// Roughly one node in four is a host (leaf endpoints that never forward).
pub fn random_topology(rng: &mut ChaCha8Rng, max_nodes: usize) -> Topology<f64> {
    let n = rng.random_range(2..=max_nodes);
    let mut kinds = vec![NodeKind::Switch; n];
    for k in kinds.iter_mut().skip(2) {
        if rng.random_bool(0.25) {
            *k = NodeKind::Host;
        }
    }
    let names: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    let mut cables: Vec<(usize, usize)> = Vec::new();
    for i in 1..n {
        cables.push((rng.random_range(0..i), i));
    }
    let extra = rng.random_range(0..=n * 2);
    for _ in 0..extra {
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a != b
            && !cables
                .iter()
                .any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a))
        {
            cables.push((a, b));
        }
    }
    let links = cables
        .iter()
        .map(|&(a, b)| LinkSpec {
            src: names[a].clone(),
            dst: names[b].clone(),
            capacity_bps: rng.random_range(1e8..1e10),
            propagation_delay_s: rng.random_range(1e-7..5e-3),
            length_m: 100.0,
            bidirectional: true,
        })
        .collect();
    build_topology(&TopologyDescription {
        nodes: names
            .iter()
            .zip(&kinds)
            .map(|(id, kind)| NodeSpec {
                id: id.clone(),
                kind: *kind,
            })
            .collect(),
        links,
    })
    .unwrap()
}

/// Telemetry with every component strictly positive, so path costs never tie.
pub fn random_snapshot(rng: &mut ChaCha8Rng, topo: &Topology<f64>) -> TelemetrySnapshot<f64> {
    let mut snap = TelemetrySnapshot::idle(topo, 0.01, 1.0);
    for link in topo.links() {
        let sent = rng.random_range(1e6..1e9);
        snap.set(LinkTelemetry {
            link: link.id,
            estimated_delay: rng.random_range(1e-6..5e-3),
            current_jitter: rng.random_range(1e-6..1e-3),
            average_jitter: rng.random_range(1e-6..1e-3),
            jitter_floor: 0.01,
            sent_bits: sent,
            dropped_bits: sent * rng.random_range(0.0..0.2),
            utilization: link.capacity * rng.random_range(0.0..1.0),
            capacity: link.capacity,
            sample_time: 1.0,
        });
    }
    snap
}

pub fn random_weights(rng: &mut ChaCha8Rng) -> CostWeights<f64> {
    let raw: [f64; 3] = [
        rng.random_range(0.01..1.0),
        rng.random_range(0.01..1.0),
        rng.random_range(0.01..1.0),
    ];
    CostWeights::normalized(raw[0], raw[1], raw[2]).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn flow(src: NodeId, dst: NodeId, deadline: Option<f64>) -> Flow<f64> {
    Flow::new(FlowId(0), src, dst, 2e8, deadline, 0.0, 1.0).unwrap()
}

/// Every simple path `src → dst` (node sequence) whose interior nodes are switches, found by
/// plain recursion over the link list.
pub fn brute_force_paths(topo: &Topology<f64>, src: NodeId, dst: NodeId) -> Vec<Vec<NodeId>> {
    fn walk(
        topo: &Topology<f64>,
        dst: NodeId,
        trail: &mut Vec<NodeId>,
        out: &mut Vec<Vec<NodeId>>,
    ) {
        let here = *trail.last().unwrap();
        if here == dst {
            out.push(trail.clone());
            return;
        }
        if trail.len() > 1 && !topo.is_switch(here) {
            return;
        }
        for link in topo.links() {
            if link.src == here && !trail.contains(&link.dst) {
                trail.push(link.dst);
                walk(topo, dst, trail, out);
                trail.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(topo, dst, &mut vec![src], &mut out);
    out.sort();
    out
}

/// Cost of one link, computed from the raw telemetry fields.
pub fn oracle_link_cost(t: &LinkTelemetry<f64>, w: &CostWeights<f64>) -> f64 {
    let jitter = if t.average_jitter > 0.0 {
        t.current_jitter / t.average_jitter
    } else if t.current_jitter == 0.0 {
        0.0
    } else {
        t.current_jitter / t.jitter_floor
    };
    let drop = if t.sent_bits > 0.0 {
        t.dropped_bits / t.sent_bits
    } else {
        0.0
    };
    w.jitter * jitter + w.loss * drop + w.utilization * (t.utilization / t.capacity)
}

pub struct OracleRoute {
    pub nodes: Vec<NodeId>,
    pub cost: f64,
    pub total_delay: f64,
}

fn links_of(topo: &Topology<f64>, nodes: &[NodeId]) -> Vec<usize> {
    nodes
        .windows(2)
        .map(|w| topo.link_between(w[0], w[1]).unwrap().0)
        .collect()
}

/// End-to-end delay: estimated link delays plus one serialization per node, the last node
/// at the last link's rate.
pub fn oracle_delay(
    topo: &Topology<f64>,
    snap: &TelemetrySnapshot<f64>,
    nodes: &[NodeId],
) -> (f64, f64) {
    let links = links_of(topo, nodes);
    let d: f64 = links.iter().map(|l| snap.links()[*l].estimated_delay).sum();
    let mut tx: f64 = links
        .iter()
        .map(|l| PACKET_BITS / topo.links()[*l].capacity)
        .sum();
    tx += PACKET_BITS / topo.links()[*links.last().unwrap()].capacity;
    (d, d + tx)
}

/// Exhaustive QRS: cheapest path meeting the deadline, ties by estimated delay, hops, nodes.
pub fn oracle_qrs(
    topo: &Topology<f64>,
    snap: &TelemetrySnapshot<f64>,
    w: &CostWeights<f64>,
    src: NodeId,
    dst: NodeId,
    deadline: Option<f64>,
) -> Option<OracleRoute> {
    let mut best: Option<(f64, f64, usize, Vec<NodeId>, f64)> = None;
    for nodes in brute_force_paths(topo, src, dst) {
        let links = links_of(topo, &nodes);
        let cost = links
            .iter()
            .fold(0.0, |acc, l| acc + oracle_link_cost(&snap.links()[*l], w));
        let (d, total) = oracle_delay(topo, snap, &nodes);
        if deadline.is_some_and(|dl| total > dl) {
            continue;
        }
        let cand = (cost, d, links.len(), nodes, total);
        let better = match &best {
            None => true,
            Some(b) => (cand.0, cand.1, cand.2)
                .partial_cmp(&(b.0, b.1, b.2))
                .unwrap()
                .then(cand.3.cmp(&b.3))
                .is_lt(),
        };
        if better {
            best = Some(cand);
        }
    }
    best.map(|(cost, _, _, nodes, total)| OracleRoute {
        nodes,
        cost,
        total_delay: total,
    })
}

/// Range of end-to-end delays over all paths, for picking deadlines that bind.
pub fn delay_range(
    topo: &Topology<f64>,
    snap: &TelemetrySnapshot<f64>,
    src: NodeId,
    dst: NodeId,
) -> Option<(f64, f64)> {
    brute_force_paths(topo, src, dst)
        .iter()
        .map(|n| oracle_delay(topo, snap, n).1)
        .fold(None, |acc, d| {
            Some(acc.map_or((d, d), |(lo, hi): (f64, f64)| (lo.min(d), hi.max(d))))
        })
}

pub fn node_path(path: &Path) -> Vec<NodeId> {
    path.nodes().to_vec()
}
