//! Stealth and impact metrics comparing clean and Trojan-inserted designs.
//!
//! All functions compare two sweeps over the same grid. Points where either
//! trace failed to converge never count as deviating.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{Element, ElementKind, Netlist};
use crate::simulator::SimTrace;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("traces were swept over different grids")]
    SweepMismatch,
    #[error("output node `{0}` is not in both traces")]
    UnknownOutputNode(String),
    #[error("clean output is 0 V at the point of maximum deviation")]
    DegenerateOutput,
    #[error("inserted transistor `{0}` has no W or L")]
    MissingGeometry(String),
    #[error("circuit area must be positive, got {0}")]
    NonPositiveArea(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// Node deviation threshold for node impact, volts.
    pub epsilon_impact: f64,
    /// Output deviation threshold for activation range, volts.
    pub epsilon_activation: f64,
    /// Output node; falls back to the manifest entry when unset.
    pub output_node: Option<String>,
    /// Circuit area in m^2; defaults to the summed W*L of the CUA.
    pub area: Option<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            epsilon_impact: 0.05,
            epsilon_activation: 0.05,
            output_node: None,
            area: None,
        }
    }
}

fn check_grid(a: &SimTrace, b: &SimTrace) -> Result<(), MetricsError> {
    let same = a.points() == b.points()
        && a.sweep_values
            .iter()
            .zip(&b.sweep_values)
            .all(|(x, y)| (x - y).abs() <= 1e-12 * (1.0 + x.abs()));
    if same {
        Ok(())
    } else {
        Err(MetricsError::SweepMismatch)
    }
}

/// `|v_trojan - v_clean|` for `node` at each point, `None` where either
/// trace is unconverged.
fn deviations(clean: &SimTrace, trojan: &SimTrace, node: &str) -> Option<Vec<Option<f64>>> {
    let i = clean.node_index(node)?;
    let j = trojan.node_index(node)?;
    Some(
        (0..clean.points())
            .map(|k| {
                (clean.converged[k] && trojan.converged[k]).then(|| (trojan.node_v[k][j] - clean.node_v[k][i]).abs())
            })
            .collect(),
    )
}

/// Percentage of clean-design nodes whose voltage moves by more than
/// `epsilon` at some sweep point. Nodes only in the Trojan trace are ignored.
pub fn node_impact(clean: &SimTrace, trojan: &SimTrace, epsilon: f64) -> Result<f64, MetricsError> {
    check_grid(clean, trojan)?;
    if clean.nodes.is_empty() {
        return Ok(0.0);
    }
    let impacted = clean
        .nodes
        .iter()
        .filter(|node| {
            deviations(clean, trojan, node)
                .is_some_and(|d| d.iter().flatten().any(|&x| x > epsilon))
        })
        .count();
    Ok(impacted as f64 / clean.nodes.len() as f64 * 100.0)
}

/// Percentage of sweep points where the output moves by more than `epsilon`.
pub fn activation_range(clean: &SimTrace, trojan: &SimTrace, output: &str, epsilon: f64) -> Result<f64, MetricsError> {
    check_grid(clean, trojan)?;
    let d = deviations(clean, trojan, output).ok_or_else(|| MetricsError::UnknownOutputNode(output.to_string()))?;
    let active = d.iter().flatten().filter(|&&x| x > epsilon).count();
    Ok(active as f64 / clean.points() as f64 * 100.0)
}

/// Clean outputs this close to 0 V are below the solver's voltage
/// resolution; the relative deviation there is noise.
pub const ZERO_VOLTS: f64 = 1e-6;

/// `|V_o - V_max| / |V_o| * 100` at the point of largest output deviation,
/// where `V_o` is the clean output there and `V_max` the Trojan output.
pub fn delta_p(clean: &SimTrace, trojan: &SimTrace, output: &str) -> Result<f64, MetricsError> {
    check_grid(clean, trojan)?;
    let d = deviations(clean, trojan, output).ok_or_else(|| MetricsError::UnknownOutputNode(output.to_string()))?;
    let mut best: Option<(usize, f64)> = None;
    for (k, dev) in d.iter().enumerate() {
        if let Some(dev) = dev {
            if best.is_none_or(|(_, b)| *dev > b) {
                best = Some((k, *dev));
            }
        }
    }
    let Some((k, dev)) = best else { return Ok(0.0) };
    if dev == 0.0 {
        return Ok(0.0);
    }
    let v_o = clean.voltage(k, output).expect("checked above");
    let v_max = trojan.voltage(k, output).expect("checked above");
    if v_o.abs() < ZERO_VOLTS {
        return Err(MetricsError::DegenerateOutput);
    }
    Ok((v_o - v_max).abs() / v_o.abs() * 100.0)
}

/// Transistor area of `trojans` as a percentage of `area`. Passive
/// elements contribute nothing.
pub fn delta_a(trojans: &[&Element], area: f64) -> Result<f64, MetricsError> {
    if !(area > 0.0) {
        return Err(MetricsError::NonPositiveArea(area));
    }
    let mut sum = 0.0;
    for e in trojans {
        if let Some(m) = e.mosfet_params() {
            match (m.w, m.l) {
                (Some(w), Some(l)) => sum += w * l,
                _ => return Err(MetricsError::MissingGeometry(e.id.clone())),
            }
        }
    }
    Ok(sum / area * 100.0)
}

/// Summed `W * L` of all transistors, the default area denominator.
pub fn mosfet_area(n: &Netlist) -> f64 {
    n.elements
        .iter()
        .filter_map(|e| e.mosfet_params())
        .filter_map(|m| Some(m.w? * m.l?))
        .sum()
}

/// Elements of `modified` whose ids do not occur in `original`.
pub fn inserted_elements<'a>(original: &Netlist, modified: &'a Netlist) -> Vec<&'a Element> {
    modified
        .elements
        .iter()
        .filter(|e| original.element(&e.id).is_none())
        .collect()
}

/// `C+NMOS` style label of the inserted types, or `-` when none.
pub fn trojan_types(elements: &[&Element]) -> String {
    let kinds: BTreeSet<ElementKind> = elements.iter().map(|e| e.kind()).collect();
    if kinds.is_empty() {
        return "-".into();
    }
    kinds.iter().map(|k| k.label()).collect::<Vec<_>>().join("+")
}

/// One results row. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub netlist: String,
    pub trojan_types: String,
    pub n_it: usize,
    #[serde(rename = "L_T")]
    pub l_t: usize,
    #[serde(rename = "R_evade")]
    pub r_evade: f64,
    pub node_impact: f64,
    pub activation_range: f64,
    /// NaN when the clean output is 0 V at the worst point; written as an
    /// empty CSV cell and JSON `null`.
    #[serde(with = "nan_as_none")]
    pub delta_p: f64,
    pub delta_a: f64,
    pub epsilon_impact: f64,
    pub epsilon_activation: f64,
}

mod nan_as_none {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

pub const CSV_COLUMNS: [&str; 11] = [
    "netlist",
    "trojan_types",
    "n_it",
    "L_T",
    "R_evade",
    "node_impact",
    "activation_range",
    "delta_p",
    "delta_a",
    "epsilon_impact",
    "epsilon_activation",
];

/// Inputs for a full metrics row.
pub struct Comparison<'a> {
    pub name: &'a str,
    pub clean: &'a Netlist,
    pub clean_trace: &'a SimTrace,
    pub trojan: &'a Netlist,
    pub trojan_trace: &'a SimTrace,
    pub output_node: &'a str,
    pub area: f64,
    pub n_it: usize,
    pub r_evade: f64,
}

pub fn compare(c: &Comparison<'_>, cfg: &MetricsConfig) -> Result<MetricsRecord, MetricsError> {
    let inserted = inserted_elements(c.clean, c.trojan);
    let delta_p = match delta_p(c.clean_trace, c.trojan_trace, c.output_node) {
        Ok(v) => v,
        Err(MetricsError::DegenerateOutput) => f64::NAN,
        Err(e) => return Err(e),
    };
    Ok(MetricsRecord {
        netlist: c.name.to_string(),
        trojan_types: trojan_types(&inserted),
        n_it: c.n_it,
        l_t: inserted.len(),
        r_evade: c.r_evade,
        node_impact: node_impact(c.clean_trace, c.trojan_trace, cfg.epsilon_impact)?,
        activation_range: activation_range(c.clean_trace, c.trojan_trace, c.output_node, cfg.epsilon_activation)?,
        delta_p,
        delta_a: delta_a(&inserted, c.area)?,
        epsilon_impact: cfg.epsilon_impact,
        epsilon_activation: cfg.epsilon_activation,
    })
}

pub fn write_records<W: Write>(records: &[MetricsRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(input: R) -> Result<Vec<MetricsRecord>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}
