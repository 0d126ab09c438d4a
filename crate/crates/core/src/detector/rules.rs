//! The individual detection rules. Each appends hits to a report; kind
//! toggles are applied afterwards by the caller.

use std::collections::{HashMap, HashSet};

use super::{DetectError, DetectionReport, Diagnosis, Rule};
use crate::netlist::{is_ground, Device, Netlist, GROUND};
use crate::simulator::{mosfet, Region, SimTrace};

/// Nodes joined to ground through resistors, voltage sources or MOSFET
/// channels; capacitors and current sources do not conduct at DC.
fn dc_grounded(n: &Netlist) -> HashSet<String> {
    let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
    for e in &n.elements {
        let (a, b) = match &e.device {
            Device::Capacitor { .. } | Device::CurrentSource { .. } => continue,
            Device::Mosfet(_) => (e.nodes[0].as_str(), e.nodes[2].as_str()),
            _ => (e.nodes[0].as_str(), e.nodes[1].as_str()),
        };
        let (a, b) = (canonical(a), canonical(b));
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let mut seen = HashSet::from([GROUND.to_string()]);
    let mut stack = vec![GROUND];
    while let Some(node) = stack.pop() {
        for &next in adj.get(node).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(next.to_string()) {
                stack.push(next);
            }
        }
    }
    seen
}

fn canonical(node: &str) -> &str {
    if is_ground(node) {
        GROUND
    } else {
        node
    }
}

/// R1: a capacitor with a terminal that has no DC path to ground.
pub fn dangling_capacitors(n: &Netlist, report: &mut DetectionReport) {
    let grounded = dc_grounded(n);
    for e in &n.elements {
        if !matches!(e.device, Device::Capacitor { .. }) {
            continue;
        }
        let floating: Vec<String> = e
            .nodes
            .iter()
            .filter(|node| !grounded.contains(canonical(node)))
            .cloned()
            .collect();
        if !floating.is_empty() {
            report.add(
                &e.id,
                Diagnosis {
                    rule: Rule::DanglingCapacitor,
                    nodes: e.nodes.clone(),
                    sweep_points: Vec::new(),
                    explanation: format!("no DC path to ground from {}", floating.join(", ")),
                },
            );
        }
    }
}

/// R2: a MOSFET with a non-ground gate that sits in cutoff, or in
/// saturation, at every converged sweep point.
pub fn stuck_mosfets(n: &Netlist, trace: &SimTrace, report: &mut DetectionReport) {
    let points: Vec<usize> = trace.converged_points().collect();
    if points.is_empty() {
        return;
    }
    for e in &n.elements {
        let Some(m) = e.mosfet_params() else { continue };
        if is_ground(&e.nodes[1]) {
            continue;
        }
        let regions: Vec<Region> = points
            .iter()
            .map(|&k| {
                let v = |node: &str| trace.voltage(k, node).unwrap_or(0.0);
                mosfet::region(m, v(&e.nodes[0]), v(&e.nodes[1]), v(&e.nodes[2]))
            })
            .collect();
        let verdict = if regions.iter().all(|r| *r == Region::Cutoff) {
            Some("in cutoff at every input: dormant device")
        } else if regions.iter().all(|r| *r == Region::Saturation) {
            Some("saturated at every input: constant current sink")
        } else {
            None
        };
        if let Some(text) = verdict {
            report.add(
                &e.id,
                Diagnosis {
                    rule: Rule::StuckMosfet,
                    nodes: e.nodes.clone(),
                    sweep_points: points.iter().map(|&k| trace.sweep_values[k]).collect(),
                    explanation: text.to_string(),
                },
            );
        }
    }
}

/// R3: every non-source element touching a node whose voltage departs from
/// the reference by more than `tau_v` at some mutually converged point.
pub fn golden_deviation(
    n: &Netlist,
    trace: &SimTrace,
    reference: &SimTrace,
    tau_v: f64,
    report: &mut DetectionReport,
) -> Result<(), DetectError> {
    if reference.points() != trace.points() {
        return Err(DetectError::TraceMismatch(format!(
            "reference has {} points, trace has {}",
            reference.points(),
            trace.points()
        )));
    }
    let mut deviating: HashMap<&str, Vec<f64>> = HashMap::new();
    for (i, node) in trace.nodes.iter().enumerate() {
        let Some(j) = reference.node_index(node) else { continue };
        let hits: Vec<f64> = (0..trace.points())
            .filter(|&k| trace.converged[k] && reference.converged[k])
            .filter(|&k| (trace.node_v[k][i] - reference.node_v[k][j]).abs() > tau_v)
            .map(|k| trace.sweep_values[k])
            .collect();
        if !hits.is_empty() {
            deviating.insert(node.as_str(), hits);
        }
    }
    for e in &n.elements {
        if matches!(e.device, Device::VoltageSource { .. } | Device::CurrentSource { .. }) {
            continue;
        }
        let touched: Vec<&String> = e.nodes.iter().filter(|x| deviating.contains_key(x.as_str())).collect();
        if touched.is_empty() {
            continue;
        }
        let mut points: Vec<f64> = touched.iter().flat_map(|x| deviating[x.as_str()].iter().copied()).collect();
        points.sort_by(f64::total_cmp);
        points.dedup();
        report.add(
            &e.id,
            Diagnosis {
                rule: Rule::GoldenDeviation,
                nodes: touched.iter().map(|s| s.to_string()).collect(),
                sweep_points: points,
                explanation: format!("deviation above {tau_v} V from the reference"),
            },
        );
    }
    Ok(())
}

/// Nodes held by a fixed (not swept) voltage source referenced to ground.
fn rails(n: &Netlist, swept: &str) -> HashSet<String> {
    let mut rails = HashSet::new();
    for e in &n.elements {
        if !matches!(e.device, Device::VoltageSource { .. }) || e.id == swept {
            continue;
        }
        match (is_ground(&e.nodes[0]), is_ground(&e.nodes[1])) {
            (false, true) => rails.insert(e.nodes[0].clone()),
            (true, false) => rails.insert(e.nodes[1].clone()),
            _ => false,
        };
    }
    rails
}

/// R4: MOSFETs whose gate node stays within `tau_stuck` of a rail (or of
/// ground) at every converged point, when that node is not a rail itself.
pub fn stuck_at_rail(n: &Netlist, trace: &SimTrace, tau_stuck: f64, report: &mut DetectionReport) {
    let points: Vec<usize> = trace.converged_points().collect();
    if points.is_empty() {
        return;
    }
    let rails = rails(n, &trace.sweep.source_id);
    let mut rail_list: Vec<&str> = rails.iter().map(String::as_str).collect();
    rail_list.sort();
    rail_list.push(GROUND);
    for e in &n.elements {
        if e.mosfet_params().is_none() {
            continue;
        }
        let gate = &e.nodes[1];
        if is_ground(gate) || rails.contains(gate) {
            continue;
        }
        let stuck_to = rail_list.iter().find(|rail| {
            points.iter().all(|&k| match (trace.voltage(k, gate), trace.voltage(k, rail)) {
                (Some(g), Some(r)) => (g - r).abs() <= tau_stuck,
                _ => false,
            })
        });
        if let Some(rail) = stuck_to {
            report.add(
                &e.id,
                Diagnosis {
                    rule: Rule::StuckAtRail,
                    nodes: vec![gate.clone(), rail.to_string()],
                    sweep_points: points.iter().map(|&k| trace.sweep_values[k]).collect(),
                    explanation: format!("gate node {gate} never leaves rail {rail}"),
                },
            );
        }
    }
}

/// R5: a resistor whose terminals sit at the same potential at every
/// converged point, so removing it would change nothing.
pub fn parasitic_resistors(n: &Netlist, trace: &SimTrace, tol: f64, report: &mut DetectionReport) {
    let points: Vec<usize> = trace.converged_points().collect();
    if points.is_empty() {
        return;
    }
    for e in &n.elements {
        if !matches!(e.device, Device::Resistor { .. }) {
            continue;
        }
        let idle = points.iter().all(|&k| {
            match (trace.voltage(k, &e.nodes[0]), trace.voltage(k, &e.nodes[1])) {
                (Some(a), Some(b)) => (a - b).abs() <= tol,
                _ => false,
            }
        });
        if idle {
            report.add(
                &e.id,
                Diagnosis {
                    rule: Rule::ParasiticResistor,
                    nodes: e.nodes.clone(),
                    sweep_points: Vec::new(),
                    explanation: "terminals at equal potential over the whole sweep".into(),
                },
            );
        }
    }
}
