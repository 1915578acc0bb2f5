//! QoS link cost, end-to-end delay model and path selection.
//!
//! Each directed link gets the weight
//!
//! ```text
//! cost = w1 * jitter / average_jitter + w2 * dropped / sent + w3 * utilization / capacity
//! ```
//!
//! and a path costs the sum of its links. QRS runs Dijkstra on that weight and only accepts
//! paths whose end-to-end delay meets the flow's deadline. The LLMP baseline runs Dijkstra on
//! the LLDP-estimated link delay alone.
//!
//! Ties are broken by estimated propagation delay, then hop count, then the lexicographic
//! node sequence, so both schemes pick the same minimum-delay path on an idle network.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::Serialize;
use thiserror::Error;

use crate::scalar::Scalar;
use crate::telemetry::{LinkTelemetry, TelemetrySnapshot};
use crate::topology::{enumerate_paths, Flow, LinkId, NodeId, Path, Topology};

/// Tolerance on `w1 + w2 + w3 = 1`.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

/// 1500-byte Ethernet frame.
pub const DEFAULT_PACKET_BITS: f64 = 12_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("cost weights must be non-negative and sum to 1 (got {0}, {1}, {2})")]
    InvalidWeights(f64, f64, f64),
    #[error("bandwidth must be positive")]
    NonPositiveBandwidth,
    #[error("packet length must be non-negative")]
    InvalidPacketLength,
    #[error("no telemetry for link {0:?}")]
    MissingTelemetry(LinkId),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RouteError {
    #[error("no path between the flow endpoints")]
    NoPath,
    #[error("no path meets the flow deadline")]
    Infeasible,
    #[error("flow endpoint is not in the topology")]
    UnknownEndpoint,
    #[error(transparent)]
    Routing(#[from] RoutingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostWeights<S> {
    pub jitter: S,
    pub loss: S,
    pub utilization: S,
}

impl<S: Scalar> CostWeights<S> {
    pub fn new(jitter: S, loss: S, utilization: S) -> Result<Self, RoutingError> {
        let err =
            || RoutingError::InvalidWeights(jitter.as_f64(), loss.as_f64(), utilization.as_f64());
        let z = S::zero();
        if !(jitter >= z && loss >= z && utilization >= z) {
            return Err(err());
        }
        let sum = (jitter + loss + utilization).as_f64();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(err());
        }
        Ok(Self {
            jitter,
            loss,
            utilization,
        })
    }

    /// Scales arbitrary non-negative weights so they sum to one.
    pub fn normalized(jitter: S, loss: S, utilization: S) -> Result<Self, RoutingError> {
        let sum = jitter + loss + utilization;
        if !(sum > S::zero()) {
            return Err(RoutingError::InvalidWeights(
                jitter.as_f64(),
                loss.as_f64(),
                utilization.as_f64(),
            ));
        }
        Self::new(jitter / sum, loss / sum, utilization / sum)
    }

    pub fn equal() -> Self {
        let third = S::one() / S::of(3.0);
        Self {
            jitter: third,
            loss: third,
            utilization: third,
        }
    }
}

impl<S: Scalar> Default for CostWeights<S> {
    fn default() -> Self {
        Self::equal()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkCost<S> {
    pub link: LinkId,
    pub cost: S,
    pub jitter_term: S,
    pub loss_term: S,
    pub utilization_term: S,
}

pub fn link_cost<S: Scalar>(stats: &LinkTelemetry<S>, weights: &CostWeights<S>) -> LinkCost<S> {
    let jitter_term = stats.jitter_ratio();
    let loss_term = stats.drop_ratio();
    let utilization_term = stats.utilization_ratio();
    LinkCost {
        link: stats.link,
        cost: weights.jitter * jitter_term
            + weights.loss * loss_term
            + weights.utilization * utilization_term,
        jitter_term,
        loss_term,
        utilization_term,
    }
}

/// Serialization delay of one packet, seconds.
pub fn transmission_delay<S: Scalar>(packet_length: S, bandwidth: S) -> Result<S, RoutingError> {
    if !(bandwidth > S::zero()) {
        return Err(RoutingError::NonPositiveBandwidth);
    }
    if !(packet_length >= S::zero()) {
        return Err(RoutingError::InvalidPacketLength);
    }
    Ok(packet_length / bandwidth)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathDelayBreakdown<S> {
    /// Estimated delay of every link, in path order.
    pub per_link: Vec<S>,
    pub propagation_sum: S,
    /// One serialization delay per node on the path (`m + 1` terms for `m` links).
    pub transmission: Vec<S>,
    pub transmission_sum: S,
    pub total: S,
}

/// End-to-end delay of `path` from estimated link delays plus per-node serialization.
///
/// Node `k < m` transmits on link `k`; the final node is charged at the rate of the last link.
pub fn path_delay<S: Scalar>(
    path: &Path,
    snapshot: &TelemetrySnapshot<S>,
    packet_length: S,
) -> Result<PathDelayBreakdown<S>, RoutingError> {
    let stats = path
        .links()
        .iter()
        .map(|l| snapshot.get(*l).ok_or(RoutingError::MissingTelemetry(*l)))
        .collect::<Result<Vec<_>, _>>()?;
    let per_link: Vec<S> = stats.iter().map(|t| t.estimated_delay).collect();
    let propagation_sum = per_link.iter().fold(S::zero(), |acc, d| acc + *d);
    let mut transmission = Vec::with_capacity(stats.len() + 1);
    for t in &stats {
        transmission.push(transmission_delay(packet_length, t.capacity)?);
    }
    let last = stats.last().expect("path has at least one link");
    transmission.push(transmission_delay(packet_length, last.capacity)?);
    let transmission_sum = transmission.iter().fold(S::zero(), |acc, d| acc + *d);
    Ok(PathDelayBreakdown {
        per_link,
        propagation_sum,
        transmission,
        transmission_sum,
        total: propagation_sum + transmission_sum,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathCost<S> {
    pub path: Path,
    /// Sum of the member link costs.
    pub cost: S,
    pub delay: PathDelayBreakdown<S>,
    pub feasible: bool,
}

/// Ordering key shared by Dijkstra and the exhaustive fallback.
#[derive(Debug, Clone, Copy)]
struct RouteKey<S> {
    primary: S,
    secondary: S,
    hops: usize,
}

impl<S: Scalar> RouteKey<S> {
    fn zero() -> Self {
        Self {
            primary: S::zero(),
            secondary: S::zero(),
            hops: 0,
        }
    }

    fn extend(self, primary: S, secondary: S) -> Self {
        Self {
            primary: self.primary + primary,
            secondary: self.secondary + secondary,
            hops: self.hops + 1,
        }
    }
}

fn cmp_scalar<S: Scalar>(a: S, b: S) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

impl<S: Scalar> Ord for RouteKey<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        cmp_scalar(self.primary, other.primary)
            .then_with(|| cmp_scalar(self.secondary, other.secondary))
            .then_with(|| self.hops.cmp(&other.hops))
    }
}

impl<S: Scalar> PartialOrd for RouteKey<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> PartialEq for RouteKey<S> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<S: Scalar> Eq for RouteKey<S> {}

struct Label<S> {
    key: RouteKey<S>,
    nodes: Vec<NodeId>,
    links: Vec<LinkId>,
}

impl<S: Scalar> Ord for Label<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .cmp(&other.key)
            .then_with(|| self.nodes.cmp(&other.nodes))
            .then_with(|| self.links.cmp(&other.links))
    }
}

impl<S: Scalar> PartialOrd for Label<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> PartialEq for Label<S> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<S: Scalar> Eq for Label<S> {}

/// Dijkstra from `src` to `dst` under the composite key. `weights[l] = (primary, secondary)`.
///
/// Every label carries its full node sequence so equal keys resolve lexicographically; that
/// order is preserved under extension, so the first label settled at `dst` is the minimum.
fn dijkstra<S: Scalar>(
    topo: &Topology<S>,
    src: NodeId,
    dst: NodeId,
    weights: &[(S, S)],
) -> Option<(Path, RouteKey<S>)> {
    let mut settled = vec![false; topo.node_count()];
    let mut heap = BinaryHeap::new();
    heap.push(Reverse(Label {
        key: RouteKey::zero(),
        nodes: vec![src],
        links: Vec::new(),
    }));
    while let Some(Reverse(label)) = heap.pop() {
        let here = *label.nodes.last().unwrap();
        if settled[here.0] {
            continue;
        }
        settled[here.0] = true;
        if here == dst {
            return Some((Path::from_parts(label.links, label.nodes), label.key));
        }
        if here != src && !topo.can_transit(here) {
            continue;
        }
        for &l in topo.outgoing(here) {
            let next = topo.link(l).dst;
            if settled[next.0] {
                continue;
            }
            let (p, s) = weights[l.0];
            let mut nodes = label.nodes.clone();
            nodes.push(next);
            let mut links = label.links.clone();
            links.push(l);
            heap.push(Reverse(Label {
                key: label.key.extend(p, s),
                nodes,
                links,
            }));
        }
    }
    None
}

fn path_key<S: Scalar>(path: &Path, weights: &[(S, S)]) -> RouteKey<S> {
    path.links().iter().fold(RouteKey::zero(), |k, l| {
        let (p, s) = weights[l.0];
        k.extend(p, s)
    })
}

fn check_flow<S: Scalar>(topo: &Topology<S>, flow: &Flow<S>) -> Result<(), RouteError> {
    if !topo.contains(flow.src) || !topo.contains(flow.dst) || flow.src == flow.dst {
        return Err(RouteError::UnknownEndpoint);
    }
    Ok(())
}

fn qrs_weights<S: Scalar>(
    topo: &Topology<S>,
    snapshot: &TelemetrySnapshot<S>,
    weights: &CostWeights<S>,
) -> Result<Vec<(S, S)>, RoutingError> {
    topo.links()
        .iter()
        .map(|l| {
            let t = snapshot
                .get(l.id)
                .ok_or(RoutingError::MissingTelemetry(l.id))?;
            Ok((link_cost(t, weights).cost, t.estimated_delay))
        })
        .collect()
}

/// Costs `path` under `snapshot` and checks it against `deadline`.
pub fn path_cost<S: Scalar>(
    path: &Path,
    snapshot: &TelemetrySnapshot<S>,
    weights: &CostWeights<S>,
    packet_length: S,
    deadline: Option<S>,
) -> Result<PathCost<S>, RoutingError> {
    let mut cost = S::zero();
    for l in path.links() {
        let t = snapshot.get(*l).ok_or(RoutingError::MissingTelemetry(*l))?;
        cost = cost + link_cost(t, weights).cost;
    }
    let delay = path_delay(path, snapshot, packet_length)?;
    let feasible = deadline.is_none_or(|d| delay.total <= d);
    Ok(PathCost {
        path: path.clone(),
        cost,
        delay,
        feasible,
    })
}

/// QRS path selection: minimum QoS cost among paths that meet the flow deadline.
pub fn select_route_qrs<S: Scalar>(
    topo: &Topology<S>,
    snapshot: &TelemetrySnapshot<S>,
    flow: &Flow<S>,
    weights: &CostWeights<S>,
    packet_length: S,
) -> Result<PathCost<S>, RouteError> {
    check_flow(topo, flow)?;
    let link_weights = qrs_weights(topo, snapshot, weights)?;
    let (path, _) = dijkstra(topo, flow.src, flow.dst, &link_weights).ok_or(RouteError::NoPath)?;
    let best = path_cost(&path, snapshot, weights, packet_length, flow.deadline)?;
    if best.feasible {
        return Ok(best);
    }

    // The cheapest path misses the deadline: fall back to the exhaustive feasible argmin.
    let candidates = enumerate_paths(topo, flow.src, flow.dst, topo.node_count())
        .map_err(|_| RouteError::UnknownEndpoint)?;
    let mut winner: Option<(RouteKey<S>, PathCost<S>)> = None;
    for p in &candidates.paths {
        let pc = path_cost(p, snapshot, weights, packet_length, flow.deadline)?;
        if !pc.feasible {
            continue;
        }
        let key = path_key(p, &link_weights);
        let better = match &winner {
            None => true,
            Some((k, w)) => (key, &pc.path) < (*k, &w.path),
        };
        if better {
            winner = Some((key, pc));
        }
    }
    winner.map(|(_, pc)| pc).ok_or(RouteError::Infeasible)
}

/// LLMP baseline: shortest path by LLDP-estimated link delay only.
pub fn select_route_llmp<S: Scalar>(
    topo: &Topology<S>,
    snapshot: &TelemetrySnapshot<S>,
    flow: &Flow<S>,
) -> Result<Path, RouteError> {
    check_flow(topo, flow)?;
    let link_weights = topo
        .links()
        .iter()
        .map(|l| {
            let t = snapshot
                .get(l.id)
                .ok_or(RoutingError::MissingTelemetry(l.id))?;
            Ok((t.estimated_delay, S::zero()))
        })
        .collect::<Result<Vec<_>, RoutingError>>()?;
    dijkstra(topo, flow.src, flow.dst, &link_weights)
        .map(|(p, _)| p)
        .ok_or(RouteError::NoPath)
}

/// Sum of LLDP-estimated link delays along `path` (the LLMP path metric).
pub fn estimated_path_delay<S: Scalar>(
    path: &Path,
    snapshot: &TelemetrySnapshot<S>,
) -> Result<S, RoutingError> {
    path.links().iter().try_fold(S::zero(), |acc, l| {
        Ok(acc
            + snapshot
                .get(*l)
                .ok_or(RoutingError::MissingTelemetry(*l))?
                .estimated_delay)
    })
}
