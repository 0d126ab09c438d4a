//! Metric laws on simulated and synthetic traces.

mod common;

use atgen_core::corpus::bundled_manifest;
use atgen_core::metrics::{activation_range, delta_a, delta_p, node_impact, MetricsError};
use atgen_core::netlist::{ModelCard, Polarity};
use atgen_core::simulator::{dc_sweep, SimOptions, SweepSpec};
use atgen_core::{Element, SimTrace};
use proptest::prelude::*;

fn window_traces() -> (SimTrace, SimTrace) {
    let ttrig = bundled_manifest().unwrap().by_name("ttrig").unwrap();
    let sweep = ttrig.sweep(&SweepSpec::new("V1", 0.0, 2.0, 26));
    let opts = SimOptions::default();
    let clean = dc_sweep(&ttrig.netlist, &sweep, &opts).unwrap();
    let infected = dc_sweep(&common::window_trojan(&ttrig.netlist), &sweep, &opts).unwrap();
    (clean, infected)
}

#[test]
fn window_trojan_fires_on_two_grid_points() {
    // Grid step 0.08 V: only 0.96 and 1.04 fall inside [0.9, 1.1].
    let (clean, infected) = window_traces();
    let inside: Vec<f64> = clean
        .sweep_values
        .iter()
        .copied()
        .filter(|v| (0.9..=1.1).contains(v))
        .collect();
    assert_eq!(inside.len(), 2);
    let act = activation_range(&clean, &infected, "out", 0.05).unwrap();
    assert_eq!(act, 2.0 / 26.0 * 100.0);
    for (k, v) in clean.sweep_values.iter().enumerate() {
        let d = (infected.voltage(k, "out").unwrap() - clean.voltage(k, "out").unwrap()).abs();
        assert_eq!(d > 0.05, inside.contains(v), "point {v}: deviation {d}");
    }
}

#[test]
fn window_trojan_degrades_output_at_peak() {
    let (clean, infected) = window_traces();
    let dp = delta_p(&clean, &infected, "out").unwrap();
    // Largest swing sits at 0.96 V; the clean output there is 1.5 V.
    let k = clean.sweep_values.iter().position(|v| (*v - 0.96).abs() < 1e-12).unwrap();
    let want = (clean.voltage(k, "out").unwrap() - infected.voltage(k, "out").unwrap()).abs() / 1.5 * 100.0;
    assert!((dp - want).abs() < 1e-6, "{dp} vs {want}");
}

fn synthetic(nodes: usize, rows: Vec<Vec<f64>>) -> SimTrace {
    let points = rows.len();
    let sweep = SweepSpec::new("V1", 0.0, 1.0, points);
    SimTrace {
        sweep_values: sweep.values(),
        sweep,
        nodes: (0..nodes).map(|i| format!("n{i}")).collect(),
        elements: vec![],
        elem_i: vec![vec![]; points],
        converged: vec![true; points],
        node_v: rows,
    }
}

fn trace_pair() -> impl Strategy<Value = (SimTrace, SimTrace)> {
    (1usize..6, 2usize..12).prop_flat_map(|(nodes, points)| {
        let rows = proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, nodes), points);
        (rows.clone(), rows).prop_map(move |(a, b)| (synthetic(nodes, a), synthetic(nodes, b)))
    })
}

proptest! {
    #[test]
    fn percentages_stay_in_range((clean, trojan) in trace_pair(), eps in 0.0f64..1.0) {
        let ni = node_impact(&clean, &trojan, eps).unwrap();
        let ar = activation_range(&clean, &trojan, "n0", eps).unwrap();
        prop_assert!((0.0..=100.0).contains(&ni));
        prop_assert!((0.0..=100.0).contains(&ar));
    }

    #[test]
    fn activation_is_antitone((clean, trojan) in trace_pair(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(activation_range(&clean, &trojan, "n0", hi).unwrap() <= activation_range(&clean, &trojan, "n0", lo).unwrap());
        prop_assert!(node_impact(&clean, &trojan, hi).unwrap() <= node_impact(&clean, &trojan, lo).unwrap());
    }

    #[test]
    fn identical_traces_are_inert((clean, _) in trace_pair(), eps in 0.0f64..1.0) {
        prop_assert_eq!(node_impact(&clean, &clean, eps).unwrap(), 0.0);
        prop_assert_eq!(activation_range(&clean, &clean, "n0", eps).unwrap(), 0.0);
        prop_assert_eq!(delta_p(&clean, &clean, "n0").unwrap(), 0.0);
    }

    #[test]
    fn delta_p_reads_the_worst_point((clean, trojan) in trace_pair()) {
        // Brute force: first index of the largest absolute output change.
        let mut best = (0usize, -1.0f64);
        for k in 0..clean.points() {
            let d = (trojan.node_v[k][0] - clean.node_v[k][0]).abs();
            if d > best.1 {
                best = (k, d);
            }
        }
        let v_o = clean.node_v[best.0][0];
        match delta_p(&clean, &trojan, "n0") {
            Ok(v) if best.1 == 0.0 => prop_assert_eq!(v, 0.0),
            Ok(v) => prop_assert!((v - best.1 / v_o.abs() * 100.0).abs() <= 1e-9 * v.abs().max(1.0)),
            Err(MetricsError::DegenerateOutput) => prop_assert!(v_o.abs() < 1e-6),
            Err(e) => prop_assert!(false, "{e}"),
        }
    }

    #[test]
    fn delta_a_is_additive(ws in proptest::collection::vec((1u32..100, 1u32..20), 1..6), area in 1e-12f64..1e-8) {
        let card = ModelCard::new("n", Polarity::N, 0.5, 2e-4);
        let elements: Vec<Element> = ws
            .iter()
            .enumerate()
            .map(|(i, (w, l))| Element::mosfet(&format!("M{i}"), ["a", "b", "0"], &card, *w as f64 * 1e-7, *l as f64 * 1e-7))
            .collect();
        let refs: Vec<&Element> = elements.iter().collect();
        let whole = delta_a(&refs, area).unwrap();
        let parts: f64 = refs.iter().map(|e| delta_a(&[*e], area).unwrap()).sum();
        prop_assert!((whole - parts).abs() <= 1e-9 * whole.max(1.0));
    }
}
