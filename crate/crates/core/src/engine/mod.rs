//! Deterministic discrete-time simulation of an SDN-controlled network.
//!
//! Every tick the engine draws each active flow's demand, shares link capacity max-min fairly,
//! advances the per-link queue proxies and samples end-to-end delay. Every cost-update
//! interval the controller measures link delays over LLDP/Echo, collects flow statistics,
//! publishes a [`TelemetrySnapshot`] and reconsiders every route. New flows are routed on
//! arrival against the latest snapshot.
//!
//! LLDP probes travel the control path, so the delay they measure is the link's propagation
//! delay plus any configured delay noise, never the data-plane queue.

pub mod alloc;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use alloc::{
    allocate_bandwidth, effective_link_delay, max_min_shares, Allocation, LinkLoad, LinkState,
};

use crate::metrics::{aggregate, FlowTrace, MetricsReport, RunTrace};
use crate::routing::{
    estimated_path_delay, path_cost, select_route_llmp, select_route_qrs, transmission_delay,
    CostWeights, RouteError, DEFAULT_PACKET_BITS,
};
use crate::scalar::{clamp, Scalar};
use crate::telemetry::{
    snapshot, ControlChannel, DelayDetector, FlowCollector, LinkWindow, TelemetryError,
    TelemetryRecord, TelemetrySnapshot,
};
use crate::topology::{Flow, FlowError, FlowId, Path, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Qrs,
    Llmp,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Qrs => "qrs",
            Scheme::Llmp => "llmp",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "qrs" => Ok(Scheme::Qrs),
            "llmp" => Ok(Scheme::Llmp),
            other => Err(format!("unknown scheme `{other}` (expected qrs or llmp)")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("flow {0}: pinned path does not connect its endpoints")]
    PinnedPath(FlowId),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationConfig<S> {
    /// seconds
    pub tick: S,
    /// seconds
    pub duration: S,
    /// seconds between telemetry snapshots / route reconsideration; also the metrics bucket
    pub cost_update_interval: S,
    pub seed: u64,
    pub weights: CostWeights<S>,
    /// bits
    pub packet_length: S,
    pub scheme: Scheme,
    /// A route moves only if the alternative costs less than `current * (1 - hysteresis)`.
    pub hysteresis: S,
    /// Queue proxy bound, in seconds of traffic at link capacity.
    pub queue_cap: S,
    /// Smoothing factor of the average jitter.
    pub jitter_alpha: S,
    /// One-way controller ↔ switch latency, seconds.
    pub control_latency: S,
    /// Half-width of the uniform perturbation on every control-plane timing, seconds.
    pub control_noise: S,
}

impl<S: Scalar> Default for SimulationConfig<S> {
    fn default() -> Self {
        Self {
            tick: S::of(0.01),
            duration: S::of(300.0),
            cost_update_interval: S::one(),
            seed: 0,
            weights: CostWeights::equal(),
            packet_length: S::of(DEFAULT_PACKET_BITS),
            scheme: Scheme::Qrs,
            hysteresis: S::of(0.1),
            queue_cap: S::of(0.1),
            jitter_alpha: S::of(0.25),
            control_latency: S::of(1e-3),
            control_noise: S::zero(),
        }
    }
}

fn whole_ticks<S: Scalar>(span: S, tick: S) -> Option<usize> {
    let n = (span / tick).round();
    let err = (n * tick - span).abs().as_f64();
    (err <= 1e-9 * span.as_f64().max(tick.as_f64()))
        .then(|| n.to_usize())
        .flatten()
}

impl<S: Scalar> SimulationConfig<S> {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |m: &str| Err(EngineError::InvalidConfig(m.to_string()));
        if !(self.tick > S::zero()) {
            return bad("tick must be positive");
        }
        if !(self.cost_update_interval >= self.tick) {
            return bad("cost_update_interval must be at least one tick");
        }
        if !(self.duration >= self.cost_update_interval) {
            return bad("duration must be at least one cost_update_interval");
        }
        if whole_ticks(self.cost_update_interval, self.tick).is_none() {
            return bad("cost_update_interval must be a whole number of ticks");
        }
        if !(self.hysteresis >= S::zero() && self.hysteresis < S::one()) {
            return bad("hysteresis must be in [0, 1)");
        }
        if !(self.queue_cap >= S::zero()) {
            return bad("queue_cap must be non-negative");
        }
        if !(self.jitter_alpha > S::zero() && self.jitter_alpha <= S::one()) {
            return bad("jitter_alpha must be in (0, 1]");
        }
        if !(self.packet_length >= S::zero()) {
            return bad("packet_length must be non-negative");
        }
        if !(self.control_latency >= S::zero() && self.control_noise >= S::zero()) {
            return bad("control-plane latency and noise must be non-negative");
        }
        Ok(())
    }

    pub fn ticks(&self) -> usize {
        (self.duration / self.tick).round().to_usize().unwrap_or(0)
    }

    pub fn ticks_per_update(&self) -> usize {
        whole_ticks(self.cost_update_interval, self.tick)
            .unwrap_or(1)
            .max(1)
    }
}

/// A flow plus how the engine drives it.
#[derive(Debug, Clone, PartialEq)]
pub struct Demand<S> {
    pub flow: Flow<S>,
    /// Fixed route; pinned traffic is never rerouted (background load).
    pub pinned: Option<Path>,
    /// Whether the flow counts towards the reported metrics.
    pub measured: bool,
    /// Relative rate fluctuation: demand = rate * clamp(1 + burstiness * x, 0, 2) with x a
    /// unit-variance AR(1) process.
    pub burstiness: S,
    /// AR(1) coefficient of the fluctuation, per tick.
    pub burst_correlation: S,
}

impl<S: Scalar> Demand<S> {
    pub fn new(flow: Flow<S>) -> Self {
        Self {
            flow,
            pinned: None,
            measured: true,
            burstiness: S::zero(),
            burst_correlation: S::zero(),
        }
    }

    pub fn background(flow: Flow<S>, path: Path) -> Self {
        Self {
            pinned: Some(path),
            measured: false,
            ..Self::new(flow)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Workload<S> {
    pub demands: Vec<Demand<S>>,
    /// Per-link delay noise bound (seconds), indexed by link id; empty means none.
    pub link_noise: Vec<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MigrationReason {
    /// The alternative beats the current cost by more than the hysteresis margin.
    Cost,
    /// The current path no longer meets the flow deadline.
    Deadline,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Migration<S> {
    pub time: S,
    pub flow: FlowId,
    pub old_path: Path,
    pub new_path: Path,
    /// QoS cost (QRS) or estimated path delay (LLMP) before and after.
    pub old_cost: S,
    pub new_cost: S,
    pub reason: MigrationReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouteTable<S> {
    routes: BTreeMap<FlowId, Path>,
    migrations: Vec<Migration<S>>,
}

impl<S: Scalar> Default for RouteTable<S> {
    fn default() -> Self {
        Self {
            routes: BTreeMap::new(),
            migrations: Vec::new(),
        }
    }
}

impl<S: Scalar> RouteTable<S> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn install(&mut self, flow: FlowId, path: Path) {
        self.routes.insert(flow, path);
    }

    pub fn get(&self, flow: FlowId) -> Option<&Path> {
        self.routes.get(&flow)
    }

    pub fn routes(&self) -> impl Iterator<Item = (&FlowId, &Path)> {
        self.routes.iter()
    }

    pub fn migrations(&self) -> &[Migration<S>] {
        &self.migrations
    }

    fn migrate(&mut self, m: Migration<S>) {
        self.routes.insert(m.flow, m.new_path.clone());
        self.migrations.push(m);
    }
}

/// Writes the migration log as CSV:
/// `time_s,flow_id,old_path,new_path,old_cost,new_cost,reason`.
pub fn write_migrations_csv<S: Scalar, W: Write>(
    topo: &Topology<S>,
    migrations: &[Migration<S>],
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "time_s", "flow_id", "old_path", "new_path", "old_cost", "new_cost", "reason",
    ])?;
    for m in migrations {
        w.write_record([
            m.time.as_f64().to_string(),
            m.flow.to_string(),
            topo.path_label(&m.old_path),
            topo.path_label(&m.new_path),
            m.old_cost.as_f64().to_string(),
            m.new_cost.as_f64().to_string(),
            match m.reason {
                MigrationReason::Cost => "cost".to_string(),
                MigrationReason::Deadline => "deadline".to_string(),
            },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A routed flow considered for migration, with its delivered rate over the last window.
#[derive(Debug, Clone, Copy)]
pub struct ActiveFlow<'a, S> {
    pub flow: &'a Flow<S>,
    pub rate: S,
}

/// Reconsiders the route of every flow in `flows`, in order.
///
/// For QRS each flow is evaluated against `snapshot` with its own traffic removed from its
/// current links, so a flow does not flee the load it creates itself. Accepted moves are
/// applied to `snapshot` before the next flow is evaluated. Returns the number of moves.
pub fn maybe_migrate<S: Scalar>(
    topo: &Topology<S>,
    table: &mut RouteTable<S>,
    snapshot: &mut TelemetrySnapshot<S>,
    flows: &[ActiveFlow<'_, S>],
    config: &SimulationConfig<S>,
    now: S,
) -> usize {
    let keep = S::one() - config.hysteresis;
    let mut moved = 0;
    for af in flows {
        let flow = af.flow;
        let Some(current) = table.get(flow.id).cloned() else {
            continue;
        };
        match config.scheme {
            Scheme::Qrs => {
                let mut view = snapshot.clone();
                for l in current.links() {
                    view.adjust_utilization(*l, -af.rate);
                }
                let Ok(now_cost) = path_cost(
                    &current,
                    &view,
                    &config.weights,
                    config.packet_length,
                    flow.deadline,
                ) else {
                    continue;
                };
                let Ok(best) =
                    select_route_qrs(topo, &view, flow, &config.weights, config.packet_length)
                else {
                    continue;
                };
                if best.path == current {
                    continue;
                }
                let reason = if best.cost < now_cost.cost * keep {
                    MigrationReason::Cost
                } else if !now_cost.feasible {
                    MigrationReason::Deadline
                } else {
                    continue;
                };
                for l in current.links() {
                    snapshot.adjust_utilization(*l, -af.rate);
                }
                for l in best.path.links() {
                    snapshot.adjust_utilization(*l, af.rate);
                }
                table.migrate(Migration {
                    time: now,
                    flow: flow.id,
                    old_path: current,
                    new_path: best.path,
                    old_cost: now_cost.cost,
                    new_cost: best.cost,
                    reason,
                });
                moved += 1;
            }
            Scheme::Llmp => {
                let (Ok(now_delay), Ok(best)) = (
                    estimated_path_delay(&current, snapshot),
                    select_route_llmp(topo, snapshot, flow),
                ) else {
                    continue;
                };
                if best == current {
                    continue;
                }
                let Ok(best_delay) = estimated_path_delay(&best, snapshot) else {
                    continue;
                };
                if best_delay < now_delay * keep {
                    table.migrate(Migration {
                        time: now,
                        flow: flow.id,
                        old_path: current,
                        new_path: best,
                        old_cost: now_delay,
                        new_cost: best_delay,
                        reason: MigrationReason::Cost,
                    });
                    moved += 1;
                }
            }
        }
    }
    moved
}

/// Cumulative traffic of one link over a run, in bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkTotals<S> {
    pub offered: S,
    pub delivered: S,
    pub dropped: S,
    /// Highest delivered rate of any tick divided by capacity.
    pub peak_utilization: S,
}

#[derive(Debug, Clone)]
pub struct RunOutput<S> {
    pub report: MetricsReport<S>,
    pub telemetry: Vec<TelemetryRecord>,
    pub routes: RouteTable<S>,
    pub link_totals: Vec<LinkTotals<S>>,
    pub failures: Vec<(FlowId, RouteError)>,
    pub clamped_estimates: usize,
}

struct FlowState<S> {
    start_tick: usize,
    stop_tick: usize,
    rng: ChaCha8Rng,
    ar: f64,
    failed: bool,
    routed: bool,
    window_bits: S,
    trace: FlowTrace<S>,
}

const FLOW_STREAM: u64 = 1 << 16;
const LINK_STREAM: u64 = 1 << 32;

fn tick_index<S: Scalar>(t: S, tick: S) -> usize {
    let k = (t / tick - S::of(1e-9)).ceil();
    k.max(S::zero()).to_usize().unwrap_or(usize::MAX)
}

fn validate_workload<S: Scalar>(
    topo: &Topology<S>,
    workload: &Workload<S>,
) -> Result<(), EngineError> {
    for d in &workload.demands {
        d.flow.check_endpoints(topo)?;
        if let Some(p) = &d.pinned {
            if p.validate(topo).is_err() || p.src() != d.flow.src || p.dst() != d.flow.dst {
                return Err(EngineError::PinnedPath(d.flow.id));
            }
        }
        if !(d.burstiness >= S::zero())
            || !(d.burst_correlation >= S::zero() && d.burst_correlation < S::one())
        {
            return Err(EngineError::InvalidConfig(format!(
                "flow {}: invalid burst parameters",
                d.flow.id
            )));
        }
    }
    if !workload.link_noise.is_empty() && workload.link_noise.len() != topo.link_count() {
        return Err(EngineError::InvalidConfig(
            "link_noise must cover every link".into(),
        ));
    }
    Ok(())
}

/// Serialization delay of every node on `path` (`m + 1` terms).
fn transmission_sum<S: Scalar>(topo: &Topology<S>, path: &Path, packet_length: S) -> S {
    let mut sum = S::zero();
    for l in path.links() {
        sum = sum + transmission_delay(packet_length, topo.link(*l).capacity).unwrap_or(S::zero());
    }
    let last = topo.link(*path.links().last().unwrap());
    sum + transmission_delay(packet_length, last.capacity).unwrap_or(S::zero())
}

/// Runs one simulation.
pub fn run<S: Scalar>(
    topo: &Topology<S>,
    workload: &Workload<S>,
    config: &SimulationConfig<S>,
) -> Result<RunOutput<S>, EngineError> {
    config.validate()?;
    validate_workload(topo, workload)?;

    let tick = config.tick;
    let n_ticks = config.ticks();
    let per_update = config.ticks_per_update();
    let n_buckets = n_ticks.div_ceil(per_update);
    let interval = tick * S::of_count(per_update);

    let channel = ControlChannel::symmetric(
        topo.node_count(),
        config.control_latency,
        config.control_noise,
        config.seed,
    )?;
    let mut detector = DelayDetector::new(channel);
    let mut collector = FlowCollector::new(topo.link_count(), config.jitter_alpha, tick)?;

    let mut states: Vec<FlowState<S>> = workload
        .demands
        .iter()
        .map(|d| {
            // keyed by flow id so a flow's demand does not depend on which other flows exist
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(FLOW_STREAM + d.flow.id.0 as u64);
            FlowState {
                start_tick: tick_index(d.flow.start_time, tick),
                stop_tick: tick_index(d.flow.stop_time, tick),
                rng,
                ar: 0.0,
                failed: false,
                routed: false,
                window_bits: S::zero(),
                trace: FlowTrace::new(d.flow.id, d.measured, n_buckets),
            }
        })
        .collect();
    let mut link_rngs: Vec<ChaCha8Rng> = (0..topo.link_count())
        .map(|l| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(LINK_STREAM + l as u64);
            rng
        })
        .collect();
    let noise_bound = |l: usize| workload.link_noise.get(l).copied().unwrap_or(S::zero());

    let mut link_states: Vec<LinkState<S>> = topo
        .links()
        .iter()
        .map(|l| LinkState::new(l, config.queue_cap))
        .collect();
    let mut windows: Vec<LinkWindow<S>> = vec![LinkWindow::new(); topo.link_count()];
    let mut totals = vec![
        LinkTotals {
            offered: S::zero(),
            delivered: S::zero(),
            dropped: S::zero(),
            peak_utilization: S::zero()
        };
        topo.link_count()
    ];
    let mut table = RouteTable::new();
    let mut failures = Vec::new();
    let mut telemetry_log = Vec::new();

    let mut working = TelemetrySnapshot::idle(topo, tick, S::zero());
    let initial = measure_delays(topo, &mut detector, &link_states);
    for (l, d) in initial.iter().enumerate() {
        let mut rec = working.links()[l].clone();
        rec.estimated_delay = *d;
        working.set(rec);
    }

    let mut tx_delay: Vec<S> = vec![S::zero(); workload.demands.len()];

    for k in 0..n_ticks {
        // arrivals
        for (i, d) in workload.demands.iter().enumerate() {
            let st = &mut states[i];
            if st.routed || st.failed || k < st.start_tick || k >= st.stop_tick {
                continue;
            }
            let chosen = match (&d.pinned, config.scheme) {
                (Some(p), _) => Ok(p.clone()),
                (None, Scheme::Qrs) => select_route_qrs(
                    topo,
                    &working,
                    &d.flow,
                    &config.weights,
                    config.packet_length,
                )
                .map(|pc| pc.path),
                (None, Scheme::Llmp) => select_route_llmp(topo, &working, &d.flow),
            };
            match chosen {
                Ok(path) => {
                    if d.pinned.is_none() {
                        for l in path.links() {
                            working.adjust_utilization(*l, d.flow.offered_rate);
                        }
                    }
                    tx_delay[i] = transmission_sum(topo, &path, config.packet_length);
                    table.install(d.flow.id, path);
                    st.routed = true;
                }
                Err(e) => {
                    log::warn!("flow {} unroutable: {e}", d.flow.id);
                    st.failed = true;
                    st.trace.failed = true;
                    failures.push((d.flow.id, e));
                }
            }
        }

        // demands of active routed flows
        let mut active: Vec<usize> = Vec::new();
        let mut demand_rates: Vec<S> = Vec::new();
        for (i, d) in workload.demands.iter().enumerate() {
            let st = &mut states[i];
            if !st.routed || k < st.start_tick || k >= st.stop_tick {
                if st.routed && k >= st.stop_tick {
                    st.trace.pause();
                }
                continue;
            }
            let factor = if d.burstiness > S::zero() {
                let rho = d.burst_correlation.as_f64();
                let z: f64 = st.rng.sample(StandardNormal);
                st.ar = rho * st.ar + (1.0 - rho * rho).sqrt() * z;
                clamp(
                    S::one() + d.burstiness * S::of(st.ar),
                    S::zero(),
                    S::of(2.0),
                )
            } else {
                S::one()
            };
            active.push(i);
            demand_rates.push(d.flow.offered_rate * factor);
        }

        let routes: Vec<(&Path, S)> = active
            .iter()
            .zip(&demand_rates)
            .map(|(i, r)| (table.get(workload.demands[*i].flow.id).unwrap(), *r))
            .collect();
        let alloc = allocate_bandwidth(topo, &routes);

        // links
        let mut delays = Vec::with_capacity(topo.link_count());
        for (l, link) in topo.links().iter().enumerate() {
            let load = alloc.links[l];
            let state = &mut link_states[l];
            state.step(link, load.offered, tick);
            let bound = noise_bound(l);
            state.noise = if bound > S::zero() {
                bound * S::of(link_rngs[l].random::<f64>())
            } else {
                S::zero()
            };
            let delay = effective_link_delay(link, state);
            delays.push(delay);
            windows[l].record(
                load.offered * tick,
                load.delivered * tick,
                load.dropped * tick,
                delay,
            );
            let t = &mut totals[l];
            t.offered = t.offered + load.offered * tick;
            t.delivered = t.delivered + load.delivered * tick;
            t.dropped = t.dropped + load.dropped * tick;
            t.peak_utilization = t.peak_utilization.max(load.delivered / link.capacity);
        }

        // flows
        let bucket = k / per_update;
        for (slot, i) in active.iter().enumerate() {
            let path = routes[slot].0;
            let delay = path
                .links()
                .iter()
                .fold(tx_delay[*i], |acc, l| acc + delays[l.0]);
            let rate = alloc.throughput[slot];
            let st = &mut states[*i];
            st.trace.record(bucket, rate, delay);
            st.window_bits = st.window_bits + rate * tick;
        }

        // cost update
        if (k + 1) % per_update == 0 {
            let now = tick * S::of_count(k + 1);
            let estimates = measure_delays(topo, &mut detector, &link_states);
            let records = topo
                .links()
                .iter()
                .map(|link| {
                    collector.collect(
                        link,
                        &windows[link.id.0],
                        interval,
                        estimates[link.id.0],
                        now,
                    )
                })
                .collect();
            let snap = snapshot(topo, records, now)?;
            telemetry_log.extend(
                snap.links()
                    .iter()
                    .map(|t| TelemetryRecord::from_telemetry(topo, t)),
            );
            working = snap;

            let candidates: Vec<ActiveFlow<'_, S>> = workload
                .demands
                .iter()
                .zip(&states)
                .filter(|(d, st)| {
                    d.pinned.is_none()
                        && st.routed
                        && k + 1 < st.stop_tick
                        && k + 1 >= st.start_tick
                })
                .map(|(d, st)| ActiveFlow {
                    flow: &d.flow,
                    rate: st.window_bits / interval,
                })
                .collect();
            let before = table.migrations().len();
            maybe_migrate(topo, &mut table, &mut working, &candidates, config, now);
            for m in &table.migrations()[before..] {
                let i = workload
                    .demands
                    .iter()
                    .position(|d| d.flow.id == m.flow)
                    .unwrap();
                tx_delay[i] = transmission_sum(topo, &m.new_path, config.packet_length);
                log::debug!(
                    "t={} {} migrated {} -> {}",
                    now,
                    m.flow,
                    topo.path_label(&m.old_path),
                    topo.path_label(&m.new_path)
                );
            }

            for w in &mut windows {
                w.reset();
            }
            for st in &mut states {
                st.window_bits = S::zero();
            }
        }
    }

    let trace = RunTrace {
        scheme: config.scheme.to_string(),
        duration: config.duration,
        bucket: interval,
        flows: states.into_iter().map(|s| s.trace).collect(),
        migrations: table.migrations().len(),
    };
    Ok(RunOutput {
        report: aggregate(&trace),
        telemetry: telemetry_log,
        routes: table,
        link_totals: totals,
        failures,
        clamped_estimates: detector.clamped_estimates(),
    })
}

/// LLDP/Echo estimate of every link. Both directions of a switch-to-switch cable share one
/// estimate; links touching a host keep their configured delay.
fn measure_delays<S: Scalar>(
    topo: &Topology<S>,
    detector: &mut DelayDetector<S>,
    states: &[LinkState<S>],
) -> Vec<S> {
    let true_delay = |l: usize| topo.links()[l].propagation_delay + states[l].noise;
    let mut out: Vec<Option<S>> = vec![None; topo.link_count()];
    for link in topo.links() {
        if out[link.id.0].is_some() {
            continue;
        }
        if !(topo.is_switch(link.src) && topo.is_switch(link.dst)) {
            out[link.id.0] = Some(true_delay(link.id.0));
            continue;
        }
        let reverse = topo.link_between(link.dst, link.src);
        let fwd = true_delay(link.id.0);
        let rev = reverse.map_or(fwd, |r| true_delay(r.0));
        let est = detector.measure(link.src, link.dst, fwd, rev);
        out[link.id.0] = Some(est);
        if let Some(r) = reverse {
            if out[r.0].is_none() {
                out[r.0] = Some(est);
            }
        }
    }
    out.into_iter().map(|d| d.unwrap()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::LinkTelemetry;
    use crate::topology::{
        build_topology, LinkId, LinkSpec, NodeId, NodeKind, NodeSpec, TopologyDescription,
    };

    fn diamond() -> Topology<f64> {
        build_topology(&TopologyDescription {
            nodes: ["a", "b", "c", "d"]
                .iter()
                .map(|n| NodeSpec {
                    id: n.to_string(),
                    kind: NodeKind::Switch,
                })
                .collect(),
            links: [("a", "b"), ("b", "d"), ("a", "c"), ("c", "d")]
                .iter()
                .map(|(a, b)| LinkSpec {
                    src: a.to_string(),
                    dst: b.to_string(),
                    capacity_bps: 1e9,
                    propagation_delay_s: 5e-7,
                    length_m: 100.0,
                    bidirectional: true,
                })
                .collect(),
        })
        .unwrap()
    }

    fn flow(id: usize, start: f64, stop: f64) -> Flow<f64> {
        Flow::new(FlowId(id), NodeId(0), NodeId(3), 2e8, None, start, stop).unwrap()
    }

    fn short_config(scheme: Scheme) -> SimulationConfig<f64> {
        SimulationConfig {
            duration: 10.0,
            scheme,
            ..SimulationConfig::default()
        }
    }

    fn path(t: &Topology<f64>, nodes: &[usize]) -> Path {
        Path::from_nodes(t, &nodes.iter().map(|n| NodeId(*n)).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn config_validation() {
        let ok = SimulationConfig::<f64>::default();
        assert!(ok.validate().is_ok());
        assert_eq!(ok.ticks(), 30_000);
        assert_eq!(ok.ticks_per_update(), 100);
        for bad in [
            SimulationConfig {
                tick: 0.0,
                ..ok.clone()
            },
            SimulationConfig {
                cost_update_interval: 0.001,
                ..ok.clone()
            },
            SimulationConfig {
                duration: 0.0,
                ..ok.clone()
            },
            SimulationConfig {
                cost_update_interval: 0.015,
                ..ok.clone()
            },
            SimulationConfig {
                hysteresis: 1.0,
                ..ok.clone()
            },
        ] {
            assert!(
                matches!(bad.validate(), Err(EngineError::InvalidConfig(_))),
                "{bad:?}"
            );
        }
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("QRS".parse::<Scheme>(), Ok(Scheme::Qrs));
        assert_eq!("llmp".parse::<Scheme>(), Ok(Scheme::Llmp));
        assert!("ospf".parse::<Scheme>().is_err());
    }

    #[test]
    fn empty_run() {
        let t = diamond();
        let out = run(&t, &Workload::default(), &short_config(Scheme::Qrs)).unwrap();
        assert_eq!(out.report.flow_count, 0);
        assert!(out.routes.migrations().is_empty());
        assert_eq!(out.report.avg_throughput, 0.0);
        assert_eq!(out.telemetry.len(), 10 * t.link_count());
    }

    #[test]
    fn single_idle_flow() {
        let t = diamond();
        let w = Workload {
            demands: vec![Demand::new(flow(0, 0.0, 10.0))],
            link_noise: vec![],
        };
        let out = run(&t, &w, &short_config(Scheme::Qrs)).unwrap();
        let r = &out.report;
        assert!((r.avg_throughput - 2e8).abs() < 1e-6);
        assert_eq!(r.avg_jitter, 0.0);
        // two links of propagation, three serialization terms of 12 us
        let expect = 2.0 * 5e-7 + 3.0 * 12e-6;
        assert!(
            (r.avg_e2e_delay - expect).abs() < 1e-15,
            "{}",
            r.avg_e2e_delay
        );
        assert!(out.link_totals.iter().all(|l| l.dropped == 0.0));
        assert!(out.routes.migrations().is_empty());
    }

    #[test]
    fn unroutable_flow_is_recorded() {
        let t = build_topology::<f64>(&TopologyDescription {
            nodes: ["a", "b"]
                .iter()
                .map(|n| NodeSpec {
                    id: n.to_string(),
                    kind: NodeKind::Switch,
                })
                .collect(),
            links: vec![],
        })
        .unwrap();
        let f = Flow::new(FlowId(0), NodeId(0), NodeId(1), 2e8, None, 0.0, 5.0).unwrap();
        let w = Workload {
            demands: vec![Demand::new(f)],
            link_noise: vec![],
        };
        let out = run(&t, &w, &short_config(Scheme::Llmp)).unwrap();
        assert_eq!(out.failures, vec![(FlowId(0), RouteError::NoPath)]);
        assert_eq!(out.report.failed_flows, 1);
    }

    #[test]
    fn pinned_path_must_match_endpoints() {
        let t = diamond();
        let w = Workload {
            demands: vec![Demand::background(flow(0, 0.0, 1.0), path(&t, &[0, 1]))],
            link_noise: vec![],
        };
        assert_eq!(
            run(&t, &w, &short_config(Scheme::Qrs)).unwrap_err(),
            EngineError::PinnedPath(FlowId(0))
        );
    }

    fn loaded_snapshot(t: &Topology<f64>, hot: &[LinkId], util: f64) -> TelemetrySnapshot<f64> {
        let mut s = TelemetrySnapshot::idle(t, 0.01, 1.0);
        for l in hot {
            s.set(LinkTelemetry {
                utilization: util * 1e9,
                ..LinkTelemetry::idle(t.link(*l), 5e-7, 0.01, 1.0)
            });
        }
        s
    }

    #[test]
    fn migrates_when_alternative_is_much_cheaper() {
        let t = diamond();
        let upper = path(&t, &[0, 1, 3]);
        let f = flow(0, 0.0, 100.0);
        let mut table = RouteTable::new();
        table.install(f.id, upper.clone());
        // current path at 0.9 utilization per link (cost 0.3 each after removing own 0.0
        // contribution), alternative at 0.2
        let mut snap = loaded_snapshot(&t, upper.links(), 0.9);
        let lower = path(&t, &[0, 2, 3]);
        for l in lower.links() {
            snap.adjust_utilization(*l, 2e8);
        }
        let cfg = short_config(Scheme::Qrs);
        let n = maybe_migrate(
            &t,
            &mut table,
            &mut snap,
            &[ActiveFlow {
                flow: &f,
                rate: 0.0,
            }],
            &cfg,
            1.0,
        );
        assert_eq!(n, 1);
        let m = &table.migrations()[0];
        assert_eq!(m.new_path, lower);
        assert!((m.old_cost - 0.6).abs() < 1e-12 && (m.new_cost - 2.0 * 0.2 / 3.0).abs() < 1e-12);
        assert!(m.new_cost < m.old_cost * 0.9);
        assert_eq!(table.get(f.id), Some(&lower));
    }

    #[test]
    fn hysteresis_blocks_small_gains() {
        let t = diamond();
        let upper = path(&t, &[0, 1, 3]);
        let lower = path(&t, &[0, 2, 3]);
        let f = flow(0, 0.0, 100.0);
        let mut table = RouteTable::new();
        table.install(f.id, upper.clone());
        let mut snap = loaded_snapshot(&t, upper.links(), 0.50);
        for l in lower.links() {
            snap.adjust_utilization(*l, 0.49e9);
        }
        let cfg = short_config(Scheme::Qrs);
        let n = maybe_migrate(
            &t,
            &mut table,
            &mut snap,
            &[ActiveFlow {
                flow: &f,
                rate: 0.0,
            }],
            &cfg,
            1.0,
        );
        assert_eq!(n, 0);
        assert_eq!(table.get(f.id), Some(&upper));
    }

    #[test]
    fn llmp_stays_put_when_delays_unchanged() {
        let t = diamond();
        let f = flow(0, 0.0, 100.0);
        let mut snap = loaded_snapshot(&t, &[LinkId(0), LinkId(2)], 1.0);
        let mut table = RouteTable::new();
        table.install(f.id, select_route_llmp(&t, &snap, &f).unwrap());
        let cfg = short_config(Scheme::Llmp);
        let n = maybe_migrate(
            &t,
            &mut table,
            &mut snap,
            &[ActiveFlow {
                flow: &f,
                rate: 2e8,
            }],
            &cfg,
            1.0,
        );
        assert_eq!(n, 0);
    }

    #[test]
    fn same_seed_same_output() {
        let t = diamond();
        let mut d = Demand::new(flow(0, 0.0, 10.0));
        d.burstiness = 0.5;
        d.burst_correlation = 0.9;
        let w = Workload {
            demands: vec![
                d.clone(),
                Demand {
                    flow: flow(1, 1.0, 9.0),
                    ..d
                },
            ],
            link_noise: vec![],
        };
        let cfg = SimulationConfig {
            seed: 9,
            ..short_config(Scheme::Qrs)
        };
        let a = run(&t, &w, &cfg).unwrap();
        let b = run(&t, &w, &cfg).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.telemetry, b.telemetry);
        let c = run(&t, &w, &SimulationConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.report, c.report);
    }

    #[test]
    fn migration_csv_header() {
        let t = diamond();
        let m = Migration {
            time: 101.0,
            flow: FlowId(3),
            old_path: path(&t, &[0, 1, 3]),
            new_path: path(&t, &[0, 2, 3]),
            old_cost: 0.9,
            new_cost: 0.2,
            reason: MigrationReason::Cost,
        };
        let mut buf = Vec::new();
        write_migrations_csv(&t, &[m], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "time_s,flow_id,old_path,new_path,old_cost,new_cost,reason\n101,f3,a>b>d,a>c>d,0.9,0.2,cost\n"
        );
    }
}
