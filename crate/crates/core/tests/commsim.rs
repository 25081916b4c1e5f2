use std::collections::HashMap;

use dopf::commsim::{build_topology, CommError, CommSimulator, CommTopology, Notification, TopologyKind};
use proptest::prelude::*;

fn delivered(sim: &mut CommSimulator<u32>) -> Vec<(f64, u32)> {
    sim.run_until(f64::INFINITY)
        .unwrap()
        .into_iter()
        .filter_map(|(t, n)| match n {
            Notification::Delivered(m) => Some((t, m.payload)),
            _ => None,
        })
        .collect()
}

#[test]
fn three_hop_delivery_is_the_sum_of_hops() {
    let topo = build_topology(TopologyKind::Ring, 6, &[], 1000.0, 0.01).unwrap();
    assert_eq!(topo.route(0, 3).unwrap().len(), 4);
    let mut sim = CommSimulator::new(topo);
    sim.send(0, 3, 200, 1, 7).unwrap();
    let got = delivered(&mut sim);
    // 200 B at 1 kbps is 1.6 s per hop, plus 10 ms of propagation
    let expected = 3.0 * (1.6 + 0.01);
    assert_eq!(got.len(), 1);
    assert!((got[0].0 - expected).abs() < 1e-12, "{}", got[0].0);
}

#[test]
fn ring_route_prefers_the_lower_node_on_ties() {
    let topo = build_topology(TopologyKind::Ring, 4, &[], 1000.0, 0.0).unwrap();
    assert_eq!(topo.route(0, 2).unwrap(), vec![0, 1, 2]);
}

#[test]
fn ideal_tree_has_one_link_per_interface() {
    let topo = build_topology(TopologyKind::Ideal, 4, &[(0, 1), (0, 2), (2, 3)], 3000.0, 1e-4).unwrap();
    assert_eq!(topo.n_links(), 3);
}

#[test]
fn ring_of_four_is_one_cycle() {
    let topo = build_topology(TopologyKind::Ring, 4, &[], 3000.0, 1e-4).unwrap();
    assert_eq!(topo.n_links(), 4);
    for n in 0..4 {
        assert_eq!(topo.neighbors(n).len(), 2);
    }
}

#[test]
fn zero_bandwidth_is_rejected() {
    assert!(matches!(
        build_topology(TopologyKind::Ring, 4, &[], 0.0, 1e-4),
        Err(CommError::Bandwidth(_))
    ));
    assert!(matches!(
        build_topology(TopologyKind::Ring, 1, &[], 1000.0, 1e-4),
        Err(CommError::TooFewNodes { .. })
    ));
}

#[test]
fn blackout_drops_with_a_logged_reason() {
    let topo = build_topology(TopologyKind::Blackout, 3, &[], 1000.0, 1e-4).unwrap();
    let mut sim = CommSimulator::new(topo);
    sim.send(0, 1, 100, 1, 0).unwrap();
    assert!(delivered(&mut sim).is_empty());
    let c = sim.counters();
    assert_eq!((c.enqueued, c.delivered, c.dropped), (1, 0, 1));
    assert!(sim.trace().iter().any(|r| r.event == "drop-no-route"));
}

#[test]
fn topology_document_round_trips() {
    let topo = build_topology(TopologyKind::Ring, 5, &[], 2000.0, 1e-3).unwrap();
    let text = serde_json::to_string(&topo.to_document()).unwrap();
    let back = CommTopology::from_json_str(&text).unwrap();
    assert_eq!(back.links, topo.links);
    assert_eq!(back.nodes, topo.nodes);
}

#[derive(Debug, Clone)]
struct Send {
    at: f64,
    from: usize,
    to: usize,
    size: usize,
}

fn sends(n: usize) -> impl Strategy<Value = Vec<Send>> {
    prop::collection::vec(
        (0.0..20.0f64, 0..n, 0..n, 64usize..400).prop_map(|(at, from, to, size)| Send { at, from, to, size }),
        1..40,
    )
    .prop_map(|mut v| {
        v.sort_by(|a, b| a.at.total_cmp(&b.at));
        v
    })
}

fn replay(topo: &CommTopology, plan: &[Send]) -> CommSimulator<u32> {
    let mut sim = CommSimulator::new(topo.clone());
    for (i, s) in plan.iter().enumerate() {
        sim.run_until(s.at).unwrap();
        sim.send(s.from, s.to, s.size, i as u64, i as u32).unwrap();
    }
    sim.run_until(f64::INFINITY).unwrap();
    sim
}

fn topology(kind: u8, bw: f64) -> CommTopology {
    match kind {
        0 => build_topology(TopologyKind::Ideal, 4, &[(0, 1), (0, 2), (2, 3)], bw, 1e-4).unwrap(),
        1 => build_topology(TopologyKind::Ring, 4, &[], bw, 1e-4).unwrap(),
        _ => build_topology(TopologyKind::Blackout, 4, &[], bw, 1e-4).unwrap(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identical_inputs_give_identical_traces(kind in 0u8..3, bw in 500.0..5000.0f64, plan in sends(4)) {
        let topo = topology(kind, bw);
        let a = replay(&topo, &plan);
        let b = replay(&topo, &plan);
        prop_assert_eq!(a.trace(), b.trace());
    }

    #[test]
    fn every_message_is_delivered_once_or_dropped(kind in 0u8..3, bw in 500.0..5000.0f64, plan in sends(4)) {
        let topo = topology(kind, bw);
        let mut sim = CommSimulator::new(topo);
        let mut seen: HashMap<u32, usize> = HashMap::new();
        for (i, s) in plan.iter().enumerate() {
            for (_, n) in sim.run_until(s.at).unwrap() {
                if let Notification::Delivered(m) = n {
                    *seen.entry(m.payload).or_default() += 1;
                }
            }
            sim.send(s.from, s.to, s.size, i as u64, i as u32).unwrap();
        }
        for (_, n) in sim.run_until(f64::INFINITY).unwrap() {
            if let Notification::Delivered(m) = n {
                *seen.entry(m.payload).or_default() += 1;
            }
        }
        let c = sim.counters();
        prop_assert_eq!(c.enqueued, plan.len() as u64);
        prop_assert_eq!(c.enqueued, c.delivered + c.dropped);
        prop_assert!(seen.values().all(|&k| k == 1));
        prop_assert_eq!(seen.len() as u64, c.delivered);
        let logged = sim.trace().iter().filter(|r| r.event.starts_with("drop")).count() as u64;
        prop_assert_eq!(logged, c.dropped);
    }

    #[test]
    fn channels_never_exceed_their_bandwidth(kind in 0u8..2, bw in 500.0..5000.0f64, plan in sends(4)) {
        let topo = topology(kind, bw);
        let sim = replay(&topo, &plan);
        let mut busy: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
        for r in sim.trace().iter().filter(|r| r.event == "transmit") {
            busy.entry(r.link.clone())
                .or_default()
                .push((r.time_s, r.time_s + r.size_bytes as f64 * 8.0 / bw));
        }
        for spans in busy.values() {
            // transmissions on one channel are serial, so bits sent in any window fit the capacity
            for w in spans.windows(2) {
                prop_assert!(w[1].0 >= w[0].1 - 1e-9, "{:?} overlaps {:?}", w[0], w[1]);
            }
        }
    }
}
