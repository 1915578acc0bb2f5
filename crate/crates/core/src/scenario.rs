//! Scenario files: a topology reference, simulation settings and the traffic to offer.
//!
//! ```toml
//! name = "example"
//! topology = "industrial-topology.toml"   # relative to the scenario file
//!
//! [config]
//! duration_s = 300.0
//! seed = 7
//! weights = { jitter = 0.5, loss = 0.25, utilization = 0.25 }
//!
//! [traffic]            # seeded random host pairs
//! pairs = 4
//! flows = 5
//! rate_bps = 2e8
//!
//! [[flows]]            # explicit flows, routed by the scheme under test
//! src = "h1"
//! dst = "h5"
//! rate_bps = 1e8
//! deadline_s = 0.002
//!
//! [[background]]       # pinned, unmeasured load
//! path = ["s1", "s3"]
//! rate_bps = 4e8
//! ```

use std::fs;
use std::io;
use std::path::{Path as FsPath, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::engine::{Demand, EngineError, Scheme, SimulationConfig, Workload};
use crate::routing::{CostWeights, RoutingError};
use crate::scalar::Scalar;
use crate::topology::{Flow, FlowError, FlowId, NodeId, Path, Topology, TopologyError};

pub const DEFAULT_SCENARIO: &str = include_str!("../scenarios/congested.toml");
pub const MIGRATION_SCENARIO: &str = include_str!("../scenarios/migration.toml");
pub const INDUSTRIAL_TOPOLOGY: &str = include_str!("../scenarios/industrial-topology.toml");
pub const INDUSTRIAL_TOPOLOGY_FILE: &str = "industrial-topology.toml";

/// Background demands get ids from here on so measured flow ids stay dense.
pub const BACKGROUND_ID_BASE: usize = 10_000;

const PAIR_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("topology file not found: {0}")]
    TopologyNotFound(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("invalid weights: {0}")]
    Weights(#[from] RoutingError),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: Option<String>,
    topology: String,
    #[serde(default)]
    config: ConfigSpec,
    traffic: Option<TrafficSpec>,
    #[serde(default)]
    flows: Vec<FlowSpec>,
    #[serde(default)]
    background: Vec<BackgroundSpec>,
    #[serde(default)]
    link_noise: Vec<LinkNoiseSpec>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigSpec {
    tick_s: Option<f64>,
    duration_s: Option<f64>,
    cost_update_interval_s: Option<f64>,
    seed: Option<u64>,
    weights: Option<WeightsSpec>,
    scheme: Option<Scheme>,
    hysteresis: Option<f64>,
    queue_cap_s: Option<f64>,
    packet_length_bits: Option<f64>,
    jitter_alpha: Option<f64>,
    control_latency_s: Option<f64>,
    control_noise_s: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsSpec {
    jitter: f64,
    loss: f64,
    utilization: f64,
}

fn default_pairs() -> usize {
    4
}
fn default_flow_count() -> usize {
    5
}
fn default_rate() -> f64 {
    2e8
}
fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrafficSpec {
    #[serde(default = "default_pairs")]
    pairs: usize,
    #[serde(default = "default_flow_count")]
    flows: usize,
    #[serde(default = "default_rate")]
    rate_bps: f64,
    /// host pools; empty means every host
    #[serde(default)]
    sources: Vec<String>,
    #[serde(default)]
    destinations: Vec<String>,
    #[serde(default = "default_one")]
    start_s: f64,
    #[serde(default = "default_one")]
    stagger_s: f64,
    stop_s: Option<f64>,
    deadline_s: Option<f64>,
    #[serde(default)]
    burstiness: f64,
    #[serde(default)]
    burst_correlation: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowSpec {
    src: String,
    dst: String,
    rate_bps: f64,
    #[serde(default)]
    start_s: f64,
    stop_s: Option<f64>,
    deadline_s: Option<f64>,
    #[serde(default)]
    burstiness: f64,
    #[serde(default)]
    burst_correlation: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackgroundSpec {
    path: Vec<String>,
    rate_bps: f64,
    #[serde(default)]
    start_s: f64,
    stop_s: Option<f64>,
    #[serde(default)]
    burstiness: f64,
    #[serde(default)]
    burst_correlation: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkNoiseSpec {
    src: String,
    dst: String,
    noise_s: f64,
}

/// A loaded scenario: topology, configuration and traffic.
#[derive(Debug, Clone)]
pub struct Scenario<S> {
    pub name: String,
    pub topology: Topology<S>,
    pub config: SimulationConfig<S>,
    file: ScenarioFile,
    flows: Vec<Demand<S>>,
    background: Vec<Demand<S>>,
    link_noise: Vec<S>,
}

impl<S: Scalar> Scenario<S> {
    /// Loads a scenario file; its topology path is resolved against the file's directory.
    pub fn load(path: &FsPath) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let dir = path.parent().map(FsPath::to_path_buf).unwrap_or_default();
        Self::parse(&text, |name| {
            let topo = dir.join(name);
            if !topo.is_file() {
                return Err(ScenarioError::TopologyNotFound(topo));
            }
            fs::read_to_string(&topo).map_err(|source| ScenarioError::Io { path: topo, source })
        })
    }

    /// The bundled congested scenario.
    pub fn bundled_default() -> Self {
        Self::parse(DEFAULT_SCENARIO, bundled_topology).expect("bundled scenario is valid")
    }

    /// The bundled scenario in which the active route congests at t = 100 s.
    pub fn bundled_migration() -> Self {
        Self::parse(MIGRATION_SCENARIO, bundled_topology).expect("bundled scenario is valid")
    }

    /// Parses scenario text; `topology` maps the referenced topology name to its contents.
    pub fn parse(
        text: &str,
        topology: impl FnOnce(&str) -> Result<String, ScenarioError>,
    ) -> Result<Self, ScenarioError> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string().trim().into()))?;
        let topo = Topology::from_toml_str(&topology(&file.topology)?)?;
        let config = build_config(&file.config)?;
        let mut scenario = Scenario {
            name: file.name.clone().unwrap_or_else(|| "scenario".into()),
            topology: topo,
            config,
            file,
            flows: Vec::new(),
            background: Vec::new(),
            link_noise: Vec::new(),
        };
        scenario.build_traffic()?;
        Ok(scenario)
    }

    /// Replaces the seed and redraws the random host pairs.
    pub fn set_seed(&mut self, seed: u64) -> Result<(), ScenarioError> {
        self.config.seed = seed;
        self.build_traffic()
    }

    pub fn set_scheme(&mut self, scheme: Scheme) {
        self.config.scheme = scheme;
    }

    /// Measured flows in id order.
    pub fn flows(&self) -> &[Demand<S>] {
        &self.flows
    }

    pub fn background(&self) -> &[Demand<S>] {
        &self.background
    }

    /// Every flow plus the background.
    pub fn workload(&self) -> Workload<S> {
        self.workload_with_flows(self.flows.len())
    }

    /// The first `n` measured flows plus the background.
    pub fn workload_with_flows(&self, n: usize) -> Workload<S> {
        let mut demands: Vec<Demand<S>> = self.flows.iter().take(n).cloned().collect();
        demands.extend(self.background.iter().cloned());
        Workload {
            demands,
            link_noise: self.link_noise.clone(),
        }
    }

    fn node(&self, field: &str, name: &str) -> Result<NodeId, ScenarioError> {
        self.topology
            .node_id(name)
            .map_err(|_| invalid(field, format!("unknown node `{name}`")))
    }

    fn stop(&self, stop: Option<f64>) -> S {
        stop.map(S::of).unwrap_or(self.config.duration)
    }

    fn build_traffic(&mut self) -> Result<(), ScenarioError> {
        let file = self.file.clone();
        let mut flows = Vec::new();
        for (i, f) in file.flows.iter().enumerate() {
            let field = format!("flows[{i}]");
            let flow = Flow::new(
                FlowId(flows.len()),
                self.node(&field, &f.src)?,
                self.node(&field, &f.dst)?,
                S::of(f.rate_bps),
                f.deadline_s.map(S::of),
                S::of(f.start_s),
                self.stop(f.stop_s),
            )?;
            flows.push(Demand {
                burstiness: S::of(f.burstiness),
                burst_correlation: S::of(f.burst_correlation),
                ..Demand::new(flow)
            });
        }
        if let Some(t) = &file.traffic {
            for (k, (src, dst)) in self
                .random_pairs(t)?
                .into_iter()
                .cycle()
                .take(t.flows)
                .enumerate()
            {
                let start = t.start_s + t.stagger_s * k as f64;
                let flow = Flow::new(
                    FlowId(flows.len()),
                    src,
                    dst,
                    S::of(t.rate_bps),
                    t.deadline_s.map(S::of),
                    S::of(start),
                    self.stop(t.stop_s),
                )?;
                flows.push(Demand {
                    burstiness: S::of(t.burstiness),
                    burst_correlation: S::of(t.burst_correlation),
                    ..Demand::new(flow)
                });
            }
        }

        let mut background = Vec::new();
        for (i, b) in file.background.iter().enumerate() {
            let field = format!("background[{i}]");
            let nodes = b
                .path
                .iter()
                .map(|n| self.node(&field, n))
                .collect::<Result<Vec<_>, _>>()?;
            let path = Path::from_nodes(&self.topology, &nodes)
                .map_err(|e| invalid(&field, e.to_string()))?;
            let flow = Flow::new(
                FlowId(BACKGROUND_ID_BASE + i),
                path.src(),
                path.dst(),
                S::of(b.rate_bps),
                None,
                S::of(b.start_s),
                self.stop(b.stop_s),
            )?;
            background.push(Demand {
                burstiness: S::of(b.burstiness),
                burst_correlation: S::of(b.burst_correlation),
                ..Demand::background(flow, path)
            });
        }

        let mut noise = Vec::new();
        if !file.link_noise.is_empty() {
            noise = vec![S::zero(); self.topology.link_count()];
            for (i, n) in file.link_noise.iter().enumerate() {
                let field = format!("link_noise[{i}]");
                let (a, b) = (self.node(&field, &n.src)?, self.node(&field, &n.dst)?);
                let link = self
                    .topology
                    .link_between(a, b)
                    .ok_or_else(|| invalid(&field, "no such link"))?;
                if !(n.noise_s >= 0.0) {
                    return Err(invalid(field, "noise_s must be non-negative"));
                }
                noise[link.0] = S::of(n.noise_s);
            }
        }

        self.flows = flows;
        self.background = background;
        self.link_noise = noise;
        let probe = self.workload();
        for d in &probe.demands {
            d.flow.check_endpoints(&self.topology)?;
        }
        Ok(())
    }

    fn pool(&self, field: &str, names: &[String]) -> Result<Vec<NodeId>, ScenarioError> {
        if names.is_empty() {
            return Ok(self
                .topology
                .nodes()
                .iter()
                .filter(|n| !self.topology.is_switch(n.id))
                .map(|n| n.id)
                .collect());
        }
        names.iter().map(|n| self.node(field, n)).collect()
    }

    /// Shuffles both host pools with the scenario seed and pairs them up position by position.
    fn random_pairs(&self, t: &TrafficSpec) -> Result<Vec<(NodeId, NodeId)>, ScenarioError> {
        if t.pairs == 0 {
            return Err(invalid("traffic.pairs", "must be at least 1"));
        }
        let mut sources = self.pool("traffic.sources", &t.sources)?;
        let mut dests = self.pool("traffic.destinations", &t.destinations)?;
        if sources.is_empty() || dests.is_empty() {
            return Err(invalid("traffic", "no hosts to draw pairs from"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(PAIR_STREAM);
        sources.shuffle(&mut rng);
        dests.shuffle(&mut rng);
        let mut pairs = Vec::with_capacity(t.pairs);
        for i in 0..t.pairs {
            let src = sources[i % sources.len()];
            let dst = (0..dests.len())
                .map(|j| dests[(i + j) % dests.len()])
                .find(|d| *d != src)
                .ok_or_else(|| {
                    invalid(
                        "traffic",
                        "destination pool has no host other than the source",
                    )
                })?;
            pairs.push((src, dst));
        }
        Ok(pairs)
    }
}

fn bundled_topology(name: &str) -> Result<String, ScenarioError> {
    if name == INDUSTRIAL_TOPOLOGY_FILE {
        Ok(INDUSTRIAL_TOPOLOGY.to_string())
    } else {
        Err(ScenarioError::TopologyNotFound(PathBuf::from(name)))
    }
}

fn build_config<S: Scalar>(spec: &ConfigSpec) -> Result<SimulationConfig<S>, ScenarioError> {
    let d = SimulationConfig::<S>::default();
    let or = |v: Option<f64>, default: S| v.map(S::of).unwrap_or(default);
    let weights = match &spec.weights {
        Some(w) => CostWeights::new(S::of(w.jitter), S::of(w.loss), S::of(w.utilization))?,
        None => d.weights,
    };
    let config = SimulationConfig {
        tick: or(spec.tick_s, d.tick),
        duration: or(spec.duration_s, d.duration),
        cost_update_interval: or(spec.cost_update_interval_s, d.cost_update_interval),
        seed: spec.seed.unwrap_or(d.seed),
        weights,
        packet_length: or(spec.packet_length_bits, d.packet_length),
        scheme: spec.scheme.unwrap_or(d.scheme),
        hysteresis: or(spec.hysteresis, d.hysteresis),
        queue_cap: or(spec.queue_cap_s, d.queue_cap),
        jitter_alpha: or(spec.jitter_alpha, d.jitter_alpha),
        control_latency: or(spec.control_latency_s, d.control_latency),
        control_noise: or(spec.control_noise_s, d.control_noise),
    };
    config.validate()?;
    Ok(config)
}
