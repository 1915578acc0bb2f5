//! Network graph: switches, hosts, directed links, paths and flows.
//!
//! A [`Topology`] is built once from a [`TopologyDescription`] and is immutable afterwards.
//! Node and link identifiers are dense indices assigned in declaration order, and that order
//! is also the order used for every lexicographic tie-break on node sequences.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct LinkId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct FlowId(pub usize);

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Switch,
    Host,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
}

/// A directed link. A physical cable is two of these with identical attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct Link<S> {
    pub id: LinkId,
    pub src: NodeId,
    pub dst: NodeId,
    /// bits per second
    pub capacity: S,
    /// seconds
    pub propagation_delay: S,
    /// meters, informational only
    pub length: S,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("link {link} references undeclared node `{node}`")]
    UnknownEndpoint { link: usize, node: String },
    #[error("link {link} is a self-loop on `{node}`")]
    SelfLoop { link: usize, node: String },
    #[error("link {link} has non-positive capacity {capacity}")]
    NonPositiveCapacity { link: usize, capacity: f64 },
    #[error("link {link} has invalid propagation delay {delay}")]
    InvalidPropagationDelay { link: usize, delay: f64 },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("source and destination are the same node")]
    SameEndpoints,
    #[error("max_hops must be at least 1")]
    ZeroMaxHops,
    #[error("topology parse error: {0}")]
    Parse(String),
}

/// On-disk topology format (TOML).
///
/// ```toml
/// [[nodes]]
/// id = "s1"
/// kind = "switch"
///
/// [[links]]
/// src = "s1"
/// dst = "s2"
/// capacity_bps = 1e9
/// propagation_delay_s = 5e-7
/// length_m = 100.0
/// bidirectional = true
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDescription {
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub src: String,
    pub dst: String,
    pub capacity_bps: f64,
    pub propagation_delay_s: f64,
    #[serde(default)]
    pub length_m: f64,
    #[serde(default = "default_bidirectional")]
    pub bidirectional: bool,
}

fn default_bidirectional() -> bool {
    true
}

impl TopologyDescription {
    pub fn from_toml_str(text: &str) -> Result<Self, TopologyError> {
        toml::from_str(text).map_err(|e| TopologyError::Parse(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct Topology<S> {
    nodes: Vec<Node>,
    links: Vec<Link<S>>,
    /// Outgoing links per node, sorted by (dst, link id).
    adjacency: Vec<Vec<LinkId>>,
    by_name: HashMap<String, NodeId>,
}

/// Validates a description and materializes the directed graph.
pub fn build_topology<S: Scalar>(desc: &TopologyDescription) -> Result<Topology<S>, TopologyError> {
    let mut nodes = Vec::with_capacity(desc.nodes.len());
    let mut by_name = HashMap::new();
    for spec in &desc.nodes {
        let id = NodeId(nodes.len());
        if by_name.insert(spec.id.clone(), id).is_some() {
            return Err(TopologyError::DuplicateNode(spec.id.clone()));
        }
        nodes.push(Node {
            id,
            name: spec.id.clone(),
            kind: spec.kind,
        });
    }

    let mut links = Vec::new();
    for (idx, spec) in desc.links.iter().enumerate() {
        let lookup = |name: &str| {
            by_name
                .get(name)
                .copied()
                .ok_or_else(|| TopologyError::UnknownEndpoint {
                    link: idx,
                    node: name.to_string(),
                })
        };
        let src = lookup(&spec.src)?;
        let dst = lookup(&spec.dst)?;
        if src == dst {
            return Err(TopologyError::SelfLoop {
                link: idx,
                node: spec.src.clone(),
            });
        }
        if !(spec.capacity_bps > 0.0) || !spec.capacity_bps.is_finite() {
            return Err(TopologyError::NonPositiveCapacity {
                link: idx,
                capacity: spec.capacity_bps,
            });
        }
        if !(spec.propagation_delay_s >= 0.0) || !spec.propagation_delay_s.is_finite() {
            return Err(TopologyError::InvalidPropagationDelay {
                link: idx,
                delay: spec.propagation_delay_s,
            });
        }
        let mut push = |src, dst| {
            links.push(Link {
                id: LinkId(links.len()),
                src,
                dst,
                capacity: S::of(spec.capacity_bps),
                propagation_delay: S::of(spec.propagation_delay_s),
                length: S::of(spec.length_m),
            })
        };
        push(src, dst);
        if spec.bidirectional {
            push(dst, src);
        }
    }

    let mut adjacency = vec![Vec::new(); nodes.len()];
    for link in &links {
        adjacency[link.src.0].push(link.id);
    }
    for out in &mut adjacency {
        out.sort_by_key(|l| (links[l.0].dst, *l));
    }

    Ok(Topology {
        nodes,
        links,
        adjacency,
        by_name,
    })
}

impl<S: Scalar> Topology<S> {
    pub fn from_toml_str(text: &str) -> Result<Self, TopologyError> {
        build_topology(&TopologyDescription::from_toml_str(text)?)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link<S>] {
        &self.links
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn link(&self, id: LinkId) -> &Link<S> {
        &self.links[id.0]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn node_id(&self, name: &str) -> Result<NodeId, TopologyError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| TopologyError::UnknownNode(name.to_string()))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id.0 < self.nodes.len()
    }

    pub fn is_switch(&self, id: NodeId) -> bool {
        self.nodes[id.0].kind == NodeKind::Switch
    }

    pub fn outgoing(&self, id: NodeId) -> &[LinkId] {
        &self.adjacency[id.0]
    }

    /// Lowest-id link from `src` to `dst`, if any.
    pub fn link_between(&self, src: NodeId, dst: NodeId) -> Option<LinkId> {
        self.adjacency[src.0]
            .iter()
            .copied()
            .find(|l| self.links[l.0].dst == dst)
    }

    /// `src>dst` label used in logs and CSV output.
    pub fn link_label(&self, id: LinkId) -> String {
        let link = &self.links[id.0];
        format!(
            "{}>{}",
            self.nodes[link.src.0].name, self.nodes[link.dst.0].name
        )
    }

    pub fn path_label(&self, path: &Path) -> String {
        path.nodes
            .iter()
            .map(|n| self.nodes[n.0].name.as_str())
            .collect::<Vec<_>>()
            .join(">")
    }

    /// Whether `node` may appear as an intermediate hop. Hosts only terminate traffic.
    pub(crate) fn can_transit(&self, node: NodeId) -> bool {
        self.is_switch(node)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error("path has no links")]
    Empty,
    #[error("link {0:?} does not exist")]
    UnknownLink(LinkId),
    #[error("links {0} and {1} do not share a node")]
    Disconnected(usize, usize),
    #[error("node {0:?} repeats")]
    RepeatedNode(NodeId),
    #[error("intermediate node {0:?} is not a switch")]
    HostTransit(NodeId),
    #[error("no link from {0:?} to {1:?}")]
    MissingHop(NodeId, NodeId),
}

/// A loop-free sequence of `m` links through `m + 1` nodes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Path {
    links: Vec<LinkId>,
    nodes: Vec<NodeId>,
}

impl Path {
    pub fn from_links<S: Scalar>(
        topo: &Topology<S>,
        links: Vec<LinkId>,
    ) -> Result<Self, PathError> {
        let first = *links.first().ok_or(PathError::Empty)?;
        if first.0 >= topo.link_count() {
            return Err(PathError::UnknownLink(first));
        }
        let mut nodes = vec![topo.link(first).src];
        for (k, id) in links.iter().enumerate() {
            if id.0 >= topo.link_count() {
                return Err(PathError::UnknownLink(*id));
            }
            let link = topo.link(*id);
            if link.src != *nodes.last().unwrap() {
                return Err(PathError::Disconnected(k - 1, k));
            }
            nodes.push(link.dst);
        }
        let path = Path { links, nodes };
        path.validate(topo)?;
        Ok(path)
    }

    /// Builds a path from a node sequence, taking the lowest-id link for every hop.
    pub fn from_nodes<S: Scalar>(topo: &Topology<S>, nodes: &[NodeId]) -> Result<Self, PathError> {
        if nodes.len() < 2 {
            return Err(PathError::Empty);
        }
        let links = nodes
            .windows(2)
            .map(|w| {
                topo.link_between(w[0], w[1])
                    .ok_or(PathError::MissingHop(w[0], w[1]))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_links(topo, links)
    }

    /// Checks the path invariants against `topo`.
    pub fn validate<S: Scalar>(&self, topo: &Topology<S>) -> Result<(), PathError> {
        if self.links.is_empty() || self.nodes.len() != self.links.len() + 1 {
            return Err(PathError::Empty);
        }
        for (k, id) in self.links.iter().enumerate() {
            if id.0 >= topo.link_count() {
                return Err(PathError::UnknownLink(*id));
            }
            let link = topo.link(*id);
            if link.src != self.nodes[k] || link.dst != self.nodes[k + 1] {
                return Err(PathError::Disconnected(k.saturating_sub(1), k));
            }
        }
        let mut seen = HashSet::new();
        for n in &self.nodes {
            if !seen.insert(*n) {
                return Err(PathError::RepeatedNode(*n));
            }
        }
        for n in &self.nodes[1..self.nodes.len() - 1] {
            if !topo.can_transit(*n) {
                return Err(PathError::HostTransit(*n));
            }
        }
        Ok(())
    }

    pub fn links(&self) -> &[LinkId] {
        &self.links
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn src(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn dst(&self) -> NodeId {
        *self.nodes.last().unwrap()
    }

    pub fn hop_count(&self) -> usize {
        self.links.len()
    }

    pub fn contains_link(&self, link: LinkId) -> bool {
        self.links.contains(&link)
    }

    pub(crate) fn from_parts(links: Vec<LinkId>, nodes: Vec<NodeId>) -> Self {
        debug_assert_eq!(links.len() + 1, nodes.len());
        Path { links, nodes }
    }
}

impl Ord for Path {
    /// Lexicographic by node sequence, then by link ids (parallel links).
    fn cmp(&self, other: &Self) -> Ordering {
        self.nodes
            .cmp(&other.nodes)
            .then_with(|| self.links.cmp(&other.links))
    }
}

impl PartialOrd for Path {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Candidate paths between one source and one destination.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub src: NodeId,
    pub dst: NodeId,
    pub paths: Vec<Path>,
    pub edge_disjoint: bool,
}

impl PathSet {
    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    /// Greedy edge-disjoint subset, keeping paths in their current order.
    pub fn edge_disjoint_subset(&self) -> PathSet {
        let mut used = HashSet::new();
        let mut paths = Vec::new();
        for p in &self.paths {
            if p.links().iter().all(|l| !used.contains(l)) {
                used.extend(p.links().iter().copied());
                paths.push(p.clone());
            }
        }
        PathSet {
            src: self.src,
            dst: self.dst,
            paths,
            edge_disjoint: true,
        }
    }
}

/// Every loop-free path from `src` to `dst` with at most `max_hops` links, in lexicographic
/// node-sequence order. Hosts are never used as intermediate hops.
pub fn enumerate_paths<S: Scalar>(
    topo: &Topology<S>,
    src: NodeId,
    dst: NodeId,
    max_hops: usize,
) -> Result<PathSet, TopologyError> {
    for n in [src, dst] {
        if !topo.contains(n) {
            return Err(TopologyError::UnknownNode(format!("#{}", n.0)));
        }
    }
    if src == dst {
        return Err(TopologyError::SameEndpoints);
    }
    if max_hops == 0 {
        return Err(TopologyError::ZeroMaxHops);
    }

    let mut paths = Vec::new();
    let mut on_path = vec![false; topo.node_count()];
    let mut nodes = vec![src];
    let mut links = Vec::new();
    on_path[src.0] = true;
    dfs(
        topo,
        dst,
        max_hops,
        &mut on_path,
        &mut nodes,
        &mut links,
        &mut paths,
    );
    paths.sort();
    Ok(PathSet {
        src,
        dst,
        paths,
        edge_disjoint: false,
    })
}

fn dfs<S: Scalar>(
    topo: &Topology<S>,
    dst: NodeId,
    max_hops: usize,
    on_path: &mut [bool],
    nodes: &mut Vec<NodeId>,
    links: &mut Vec<LinkId>,
    out: &mut Vec<Path>,
) {
    let here = *nodes.last().unwrap();
    for &l in topo.outgoing(here) {
        let next = topo.link(l).dst;
        if on_path[next.0] {
            continue;
        }
        if next == dst {
            let mut ls = links.clone();
            ls.push(l);
            let mut ns = nodes.clone();
            ns.push(next);
            out.push(Path::from_parts(ls, ns));
            continue;
        }
        if links.len() + 1 >= max_hops || !topo.can_transit(next) {
            continue;
        }
        on_path[next.0] = true;
        nodes.push(next);
        links.push(l);
        dfs(topo, dst, max_hops, on_path, nodes, links, out);
        links.pop();
        nodes.pop();
        on_path[next.0] = false;
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("flow {0}: source equals destination")]
    SameEndpoints(FlowId),
    #[error("flow {0}: offered rate must be positive")]
    NonPositiveRate(FlowId),
    #[error("flow {0}: start time must precede stop time")]
    EmptyInterval(FlowId),
    #[error("flow {0}: deadline must be positive")]
    NonPositiveDeadline(FlowId),
    #[error("flow {0}: endpoint not in topology")]
    UnknownEndpoint(FlowId),
}

/// A source-to-destination demand.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Flow<S> {
    pub id: FlowId,
    pub src: NodeId,
    pub dst: NodeId,
    /// bits per second
    pub offered_rate: S,
    /// Maximum tolerable end-to-end delay in seconds; `None` means unconstrained.
    pub deadline: Option<S>,
    pub start_time: S,
    pub stop_time: S,
}

impl<S: Scalar> Flow<S> {
    pub fn new(
        id: FlowId,
        src: NodeId,
        dst: NodeId,
        offered_rate: S,
        deadline: Option<S>,
        start_time: S,
        stop_time: S,
    ) -> Result<Self, FlowError> {
        if src == dst {
            return Err(FlowError::SameEndpoints(id));
        }
        if !(offered_rate > S::zero()) {
            return Err(FlowError::NonPositiveRate(id));
        }
        if !(start_time < stop_time) {
            return Err(FlowError::EmptyInterval(id));
        }
        if let Some(d) = deadline {
            if !(d > S::zero()) {
                return Err(FlowError::NonPositiveDeadline(id));
            }
        }
        Ok(Flow {
            id,
            src,
            dst,
            offered_rate,
            deadline,
            start_time,
            stop_time,
        })
    }

    pub fn check_endpoints(&self, topo: &Topology<S>) -> Result<(), FlowError> {
        if topo.contains(self.src) && topo.contains(self.dst) {
            Ok(())
        } else {
            Err(FlowError::UnknownEndpoint(self.id))
        }
    }

    pub fn is_active(&self, now: S) -> bool {
        now >= self.start_time && now < self.stop_time
    }
}
