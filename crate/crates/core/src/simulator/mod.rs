//! DC operating point and DC sweep analysis.
//!
//! Modified nodal analysis with a level-1 MOSFET model, solved by damped
//! Newton-Raphson with gmin and source stepping fallbacks. Capacitors are
//! open at DC apart from a tiny conductance that keeps their nodes solvable.

mod mna;
pub mod mosfet;
mod trace;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{is_ground, Device, Netlist};

pub use mna::{GMIN_CAP, GMIN_MOS};
pub use mosfet::Region;
pub use trace::{SimTrace, TraceError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("no convergence after {iterations} iterations (best residual {best_residual:e})")]
    NonConvergence { iterations: usize, best_residual: f64 },
    #[error("singular matrix: floating nodes {nodes:?}")]
    SingularMatrix { nodes: Vec<String> },
    #[error("unknown voltage source `{0}`")]
    UnknownSource(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
}

/// Newton tolerances and iteration budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    /// Infinity norm bound on the MNA residual (amperes on node rows).
    pub tol_res: f64,
    /// Bound on the last Newton voltage update.
    pub tol_v: f64,
    pub max_iter: usize,
    /// Solve sweep points from the top of the grid down. Rows are still
    /// stored in ascending order.
    pub descending: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            tol_res: 1e-9,
            tol_v: 1e-6,
            max_iter: 200,
            descending: false,
        }
    }
}

/// Uniform DC sweep of one voltage source, endpoints included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub source_id: String,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
}

impl SweepSpec {
    pub fn new(source_id: &str, start: f64, stop: f64, points: usize) -> Self {
        SweepSpec {
            source_id: source_id.to_string(),
            start,
            stop,
            points,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.start < self.stop) {
            return Err(SimError::InvalidSweep(format!(
                "start {} must be below stop {}",
                self.start, self.stop
            )));
        }
        if self.points < 2 {
            return Err(SimError::InvalidSweep(format!("{} points, need at least 2", self.points)));
        }
        Ok(())
    }

    /// Grid values in ascending order.
    pub fn values(&self) -> Vec<f64> {
        let span = self.stop - self.start;
        let last = (self.points - 1) as f64;
        (0..self.points)
            .map(|k| self.start + span * k as f64 / last)
            .collect()
    }
}

/// Solution at one bias point.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub nodes: Vec<String>,
    pub node_v: Vec<f64>,
    pub elements: Vec<String>,
    pub elem_i: Vec<f64>,
    pub iterations: usize,
}

impl OperatingPoint {
    /// Node voltage by name; ground reads 0.
    pub fn voltage(&self, node: &str) -> Option<f64> {
        if is_ground(node) {
            return Some(0.0);
        }
        self.nodes.iter().position(|n| n == node).map(|i| self.node_v[i])
    }

    pub fn current(&self, id: &str) -> Option<f64> {
        self.elements.iter().position(|e| e == id).map(|i| self.elem_i[i])
    }
}

fn source_values(circuit: &mna::Circuit, overrides: &HashMap<String, f64>) -> Result<Vec<f64>, SimError> {
    let mut values = circuit.sources.clone();
    for (id, v) in overrides {
        let i = *circuit
            .source_index
            .get(id)
            .ok_or_else(|| SimError::UnknownSource(id.clone()))?;
        values[i] = *v;
    }
    Ok(values)
}

/// DC operating point with some sources pinned to new values.
pub fn dc_operating_point(
    n: &Netlist,
    fixed_inputs: &HashMap<String, f64>,
    opts: &SimOptions,
) -> Result<OperatingPoint, SimError> {
    let circuit = mna::Circuit::compile(n)?;
    let sources = source_values(&circuit, fixed_inputs)?;
    let guess = vec![0.0; circuit.size()];
    let (x, iterations) = circuit.solve(&sources, &guess, opts)?;
    let elem_i = circuit.currents(&x, &sources);
    Ok(OperatingPoint {
        node_v: x[..circuit.node_count()].to_vec(),
        nodes: circuit.nodes,
        elements: circuit.element_ids,
        elem_i,
        iterations,
    })
}

/// Sweep one voltage source across `spec`, warm-starting each point from
/// the last converged one. Points that fail to converge are flagged and
/// filled with NaN; only structural problems abort the sweep.
pub fn dc_sweep(n: &Netlist, spec: &SweepSpec, opts: &SimOptions) -> Result<SimTrace, SimError> {
    spec.validate()?;
    let is_vsource = n
        .element(&spec.source_id)
        .is_some_and(|e| matches!(e.device, Device::VoltageSource { .. }));
    if !is_vsource {
        return Err(SimError::UnknownSource(spec.source_id.clone()));
    }
    let circuit = mna::Circuit::compile(n)?;
    let src = circuit.source_index[&spec.source_id];
    let n_nodes = circuit.node_count();
    let mut sources = circuit.sources.clone();
    let mut guess = vec![0.0; circuit.size()];

    let values = spec.values();
    let mut node_v = vec![Vec::new(); values.len()];
    let mut elem_i = vec![Vec::new(); values.len()];
    let mut converged = vec![false; values.len()];
    let order: Vec<usize> = if opts.descending {
        (0..values.len()).rev().collect()
    } else {
        (0..values.len()).collect()
    };
    for k in order {
        sources[src] = values[k];
        match circuit.solve(&sources, &guess, opts) {
            Ok((x, _)) => {
                node_v[k] = x[..n_nodes].to_vec();
                elem_i[k] = circuit.currents(&x, &sources);
                converged[k] = true;
                guess = x;
            }
            Err(SimError::NonConvergence { .. }) => {
                node_v[k] = vec![f64::NAN; n_nodes];
                elem_i[k] = vec![f64::NAN; circuit.element_ids.len()];
            }
            Err(e) => return Err(e),
        }
    }
    Ok(SimTrace {
        sweep: spec.clone(),
        sweep_values: values,
        nodes: circuit.nodes,
        elements: circuit.element_ids,
        node_v,
        elem_i,
        converged,
    })
}

/// Largest KCL residual over all nodes, from reported element currents.
pub fn kcl_residual(n: &Netlist, nodes: &[String], elem_i: &[f64]) -> f64 {
    let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut leaving = vec![0.0; nodes.len()];
    let mut add = |node: &str, i: f64| {
        if let Some(&k) = index.get(node) {
            leaving[k] += i;
        }
    };
    for (e, &i) in n.elements.iter().zip(elem_i) {
        let last = e.nodes.len() - 1;
        add(&e.nodes[0], i);
        add(&e.nodes[last], -i);
    }
    leaving.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}
