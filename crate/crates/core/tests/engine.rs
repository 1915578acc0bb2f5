mod common;

use std::collections::VecDeque;

use common::*;
use qrs_core::engine::{run, Demand, Scheme, SimulationConfig, Workload};
use qrs_core::routing::{select_route_llmp, select_route_qrs, CostWeights};
use qrs_core::scenario::Scenario;
use qrs_core::telemetry::TelemetrySnapshot;
use qrs_core::topology::{build_topology, Flow, FlowId, LinkSpec, NodeId, NodeKind, Topology};
use rand::Rng;

fn bundled() -> Scenario<f64> {
    Scenario::bundled_default()
}

#[test]
fn bundled_topology_shape() {
    let t = bundled().topology;
    let switches: Vec<_> = t
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::Switch)
        .collect();
    let hosts: Vec<_> = t
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::Host)
        .collect();
    assert_eq!((switches.len(), hosts.len()), (10, 8));
    for l in t.links() {
        assert_eq!(l.capacity, 1e9);
        assert_eq!(l.length, 100.0);
        assert!(
            t.link_between(l.dst, l.src).is_some(),
            "cables are full duplex"
        );
    }
}

/// Whether the switches stay connected after removing the cable `cut` (both directions).
fn switches_connected(t: &Topology<f64>, cut: Option<(NodeId, NodeId)>) -> bool {
    let switches: Vec<NodeId> = t
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::Switch)
        .map(|n| n.id)
        .collect();
    let mut seen = vec![false; t.node_count()];
    let mut queue = VecDeque::from([switches[0]]);
    seen[switches[0].0] = true;
    while let Some(n) = queue.pop_front() {
        for l in t
            .links()
            .iter()
            .filter(|l| l.src == n && t.is_switch(l.dst))
        {
            let pair = (l.src, l.dst);
            if cut.is_some_and(|(a, b)| pair == (a, b) || pair == (b, a)) {
                continue;
            }
            if !seen[l.dst.0] {
                seen[l.dst.0] = true;
                queue.push_back(l.dst);
            }
        }
    }
    switches.iter().all(|s| seen[s.0])
}

#[test]
fn bundled_switch_fabric_survives_any_single_cable_cut() {
    // two edge-disjoint paths between every pair of switches
    let t = bundled().topology;
    assert!(switches_connected(&t, None));
    for l in t
        .links()
        .iter()
        .filter(|l| t.is_switch(l.src) && t.is_switch(l.dst))
    {
        assert!(
            switches_connected(&t, Some((l.src, l.dst))),
            "cut {}",
            t.link_label(l.id)
        );
    }
}

#[test]
fn same_seed_bit_identical() {
    let s = bundled();
    let runs: Vec<_> = (0..3)
        .map(|_| run(&s.topology, &s.workload(), &s.config).unwrap())
        .collect();
    for r in &runs[1..] {
        assert_eq!(r.report, runs[0].report);
        assert_eq!(r.telemetry, runs[0].telemetry);
        assert_eq!(r.routes, runs[0].routes);
        assert_eq!(r.link_totals, runs[0].link_totals);
    }
}

#[test]
fn zero_flows_is_all_zero() {
    let s = bundled();
    let out = run(&s.topology, &s.workload_with_flows(0), &s.config).unwrap();
    let r = &out.report;
    assert_eq!(
        (
            r.flow_count,
            r.avg_throughput,
            r.avg_e2e_delay,
            r.avg_jitter
        ),
        (0, 0.0, 0.0, 0.0)
    );
    assert!(r.series.is_empty());
}

#[test]
fn lone_steady_flow_gets_its_rate() {
    let t = bundled().topology;
    let h = |n: &str| t.node_id(n).unwrap();
    let f = Flow::new(FlowId(0), h("h1"), h("h6"), 2e8, None, 0.0, 300.0).unwrap();
    let w = Workload {
        demands: vec![Demand::new(f)],
        link_noise: vec![],
    };
    for scheme in [Scheme::Qrs, Scheme::Llmp] {
        let out = run(
            &t,
            &w,
            &SimulationConfig {
                scheme,
                ..SimulationConfig::default()
            },
        )
        .unwrap();
        assert!((out.report.avg_throughput - 2e8).abs() < 1e-3);
        assert_eq!(out.report.avg_jitter, 0.0);
        assert_eq!(out.report.series.len(), 300);
        assert!(out.routes.migrations().is_empty());
    }
}

#[test]
fn idle_network_schemes_agree() {
    let t = bundled().topology;
    let snap = TelemetrySnapshot::idle(&t, 0.01, 0.0);
    let hosts: Vec<NodeId> = t
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::Host)
        .map(|n| n.id)
        .collect();
    for &a in &hosts {
        for &b in hosts.iter().filter(|b| **b != a) {
            let f = flow(a, b, None);
            let q = select_route_qrs(&t, &snap, &f, &CostWeights::equal(), PACKET_BITS).unwrap();
            assert_eq!(q.path, select_route_llmp(&t, &snap, &f).unwrap());
        }
    }
}

#[test]
fn idle_symmetric_random_graphs_schemes_agree() {
    for seed in 0..100 {
        let mut r = rng(seed);
        let random = random_topology(&mut r, 8);
        // rebuild with identical link parameters so every link looks the same
        let desc = qrs_core::topology::TopologyDescription {
            nodes: random
                .nodes()
                .iter()
                .map(|n| qrs_core::topology::NodeSpec {
                    id: n.name.clone(),
                    kind: n.kind,
                })
                .collect(),
            links: random
                .links()
                .iter()
                .map(|l| LinkSpec {
                    src: random.node(l.src).name.clone(),
                    dst: random.node(l.dst).name.clone(),
                    capacity_bps: 1e9,
                    propagation_delay_s: 5e-7,
                    length_m: 100.0,
                    bidirectional: false,
                })
                .collect(),
        };
        let t = build_topology::<f64>(&desc).unwrap();
        let snap = TelemetrySnapshot::idle(&t, 0.01, 0.0);
        let (a, b) = (NodeId(0), NodeId(r.random_range(1..t.node_count())));
        let f = flow(a, b, None);
        match select_route_llmp(&t, &snap, &f) {
            Ok(p) => {
                let q =
                    select_route_qrs(&t, &snap, &f, &CostWeights::equal(), PACKET_BITS).unwrap();
                assert_eq!(q.path, p, "seed {seed}");
            }
            Err(e) => assert_eq!(
                select_route_qrs(&t, &snap, &f, &CostWeights::equal(), PACKET_BITS).unwrap_err(),
                e
            ),
        }
    }
}

#[test]
fn migration_scenario_moves_off_the_congested_link() {
    let s = Scenario::<f64>::bundled_migration();
    let out = run(&s.topology, &s.workload(), &s.config).unwrap();
    let m = out.routes.migrations();
    assert_eq!(m.len(), 1, "{m:?}");
    assert!(m[0].time > 100.0 && m[0].time <= 101.0);
    assert!(m[0].new_cost < 0.9 * m[0].old_cost);
    let mut llmp = s.config.clone();
    llmp.scheme = Scheme::Llmp;
    assert!(run(&s.topology, &s.workload(), &llmp)
        .unwrap()
        .routes
        .migrations()
        .is_empty());
}

#[test]
fn flow_sweep_keeps_background_fixed() {
    // a flow's demand stream is keyed by its id, so adding flows leaves background unchanged
    let s = bundled();
    let a = run(&s.topology, &s.workload_with_flows(0), &s.config).unwrap();
    let b = run(&s.topology, &s.workload_with_flows(0), &s.config).unwrap();
    assert_eq!(a.link_totals, b.link_totals);
    let one = run(&s.topology, &s.workload_with_flows(1), &s.config).unwrap();
    let background_link = s.background()[0].pinned.as_ref().unwrap().links()[0];
    assert!(one.link_totals[background_link.0].offered >= a.link_totals[background_link.0].offered);
}

#[test]
fn single_precision_run_matches_double() {
    let desc: qrs_core::topology::TopologyDescription =
        toml::from_str(qrs_core::scenario::INDUSTRIAL_TOPOLOGY).unwrap();
    let t = build_topology::<f32>(&desc).unwrap();
    let h = |n: &str| t.node_id(n).unwrap();
    let f = Flow::new(FlowId(0), h("h1"), h("h6"), 2e8f32, None, 0.0, 30.0).unwrap();
    let w = Workload {
        demands: vec![Demand::new(f)],
        link_noise: vec![],
    };
    let config = qrs_core::f32::SimulationConfig {
        duration: 30.0,
        ..SimulationConfig::default()
    };
    let out = run(&t, &w, &config).unwrap();
    let t64 = bundled().topology;
    let f64_flow = Flow::new(FlowId(0), h("h1"), h("h6"), 2e8, None, 0.0, 30.0).unwrap();
    let w64 = Workload {
        demands: vec![Demand::new(f64_flow)],
        link_noise: vec![],
    };
    let reference = run(
        &t64,
        &w64,
        &SimulationConfig {
            duration: 30.0,
            ..SimulationConfig::default()
        },
    )
    .unwrap();
    assert!(
        (out.report.avg_throughput as f64 / reference.report.avg_throughput - 1.0).abs() < 1e-5
    );
    assert!((out.report.avg_e2e_delay as f64 / reference.report.avg_e2e_delay - 1.0).abs() < 1e-5);
    assert_eq!(
        out.routes.routes().count(),
        reference.routes.routes().count()
    );
}
