// `!(x > 0)` style guards also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod engine;
pub mod metrics;
pub mod routing;
pub mod scalar;
pub mod scenario;
pub mod telemetry;
pub mod topology;

/// Double-precision instantiations of the generic types.
pub type Topology = topology::Topology<f64>;
pub type Flow = topology::Flow<f64>;
pub type CostWeights = routing::CostWeights<f64>;
pub type TelemetrySnapshot = telemetry::TelemetrySnapshot<f64>;
pub type SimulationConfig = engine::SimulationConfig<f64>;
pub type Workload = engine::Workload<f64>;
pub type RunOutput = engine::RunOutput<f64>;
pub type MetricsReport = metrics::MetricsReport<f64>;
pub type Scenario = scenario::Scenario<f64>;

/// Single-precision instantiations, for memory-bound sweeps.
pub mod f32 {
    pub type Topology = crate::topology::Topology<f32>;
    pub type Flow = crate::topology::Flow<f32>;
    pub type CostWeights = crate::routing::CostWeights<f32>;
    pub type TelemetrySnapshot = crate::telemetry::TelemetrySnapshot<f32>;
    pub type SimulationConfig = crate::engine::SimulationConfig<f32>;
    pub type Workload = crate::engine::Workload<f32>;
    pub type RunOutput = crate::engine::RunOutput<f32>;
    pub type MetricsReport = crate::metrics::MetricsReport<f32>;
}
