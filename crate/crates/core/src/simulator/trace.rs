//! Sweep results and their CSV form.
//!
//! Columns are `sweep`, then `v(<node>)` per node, then `i(<element>)` per
//! element. Unconverged rows are written as `NaN`.

use std::io::{Read, Write};

use thiserror::Error;

use super::SweepSpec;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("bad trace header column `{0}`")]
    BadHeader(String),
    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },
    #[error("trace has fewer than 2 rows")]
    TooShort,
}

/// Node voltages and element currents at each sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub sweep: SweepSpec,
    pub sweep_values: Vec<f64>,
    /// Non-ground nodes; ground is implicitly 0 V.
    pub nodes: Vec<String>,
    pub elements: Vec<String>,
    /// `[point][node]`
    pub node_v: Vec<Vec<f64>>,
    /// `[point][element]`
    pub elem_i: Vec<Vec<f64>>,
    pub converged: Vec<bool>,
}

impl SimTrace {
    pub fn points(&self) -> usize {
        self.sweep_values.len()
    }

    pub fn node_index(&self, node: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == node)
    }

    pub fn element_index(&self, id: &str) -> Option<usize> {
        self.elements.iter().position(|e| e == id)
    }

    /// Voltage of `node` at point `k`; ground reads 0.
    pub fn voltage(&self, k: usize, node: &str) -> Option<f64> {
        if crate::netlist::is_ground(node) {
            return Some(0.0);
        }
        self.node_index(node).map(|i| self.node_v[k][i])
    }

    pub fn node_series(&self, node: &str) -> Option<Vec<f64>> {
        let i = self.node_index(node)?;
        Some(self.node_v.iter().map(|row| row[i]).collect())
    }

    pub fn current_series(&self, id: &str) -> Option<Vec<f64>> {
        let i = self.element_index(id)?;
        Some(self.elem_i.iter().map(|row| row[i]).collect())
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|c| *c)
    }

    pub fn converged_points(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.points()).filter(|k| self.converged[*k])
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TraceError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["sweep".to_string()];
        header.extend(self.nodes.iter().map(|n| format!("v({n})")));
        header.extend(self.elements.iter().map(|e| format!("i({e})")));
        w.write_record(&header)?;
        for k in 0..self.points() {
            let mut row = vec![self.sweep_values[k].to_string()];
            row.extend(self.node_v[k].iter().map(|v| v.to_string()));
            row.extend(self.elem_i[k].iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Read a trace written by [`SimTrace::write_csv`]. The swept source id
    /// is not stored in the file, so the caller supplies it.
    pub fn read_csv<R: Read>(input: R, source_id: &str) -> Result<SimTrace, TraceError> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let mut nodes = Vec::new();
        let mut elements = Vec::new();
        for (k, col) in header.iter().enumerate() {
            if k == 0 {
                if col != "sweep" {
                    return Err(TraceError::BadHeader(col.to_string()));
                }
                continue;
            }
            if let Some(n) = col.strip_prefix("v(").and_then(|c| c.strip_suffix(')')) {
                if !elements.is_empty() {
                    return Err(TraceError::BadHeader(col.to_string()));
                }
                nodes.push(n.to_string());
            } else if let Some(e) = col.strip_prefix("i(").and_then(|c| c.strip_suffix(')')) {
                elements.push(e.to_string());
            } else {
                return Err(TraceError::BadHeader(col.to_string()));
            }
        }
        let mut sweep_values = Vec::new();
        let mut node_v = Vec::new();
        let mut elem_i = Vec::new();
        let mut converged = Vec::new();
        for (row_no, record) in r.records().enumerate() {
            let record = record?;
            let values = record
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|e| TraceError::BadRow {
                    row: row_no + 1,
                    message: e.to_string(),
                })?;
            sweep_values.push(values[0]);
            let nv = values[1..1 + nodes.len()].to_vec();
            let ei = values[1 + nodes.len()..].to_vec();
            converged.push(nv.iter().chain(&ei).all(|v| v.is_finite()));
            node_v.push(nv);
            elem_i.push(ei);
        }
        if sweep_values.len() < 2 {
            return Err(TraceError::TooShort);
        }
        let sweep = SweepSpec::new(source_id, sweep_values[0], sweep_values[sweep_values.len() - 1], sweep_values.len());
        Ok(SimTrace {
            sweep,
            sweep_values,
            nodes,
            elements,
            node_v,
            elem_i,
            converged,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::Netlist;
    use crate::simulator::{dc_sweep, SimOptions};

    #[test]
    fn csv_round_trip() {
        let n = Netlist::parse("d\nV1 in 0 1\nR1 in mid 1k\nR2 mid 0 1k\n").unwrap();
        let mut trace = dc_sweep(&n, &SweepSpec::new("V1", 0.0, 2.0, 5), &SimOptions::default()).unwrap();
        trace.converged[2] = false;
        trace.node_v[2].iter_mut().for_each(|v| *v = f64::NAN);
        trace.elem_i[2].iter_mut().for_each(|v| *v = f64::NAN);
        let text = trace.to_csv_string();
        assert!(text.starts_with("sweep,v(in),v(mid),i(V1),i(R1),i(R2)\n"));
        let back = SimTrace::read_csv(text.as_bytes(), "V1").unwrap();
        assert_eq!(back.converged, trace.converged);
        assert_eq!(back.nodes, trace.nodes);
        assert_eq!(back.node_v[1], trace.node_v[1]);
        assert_eq!(back.sweep, trace.sweep);
        assert!(back.node_v[2][0].is_nan());
    }

    #[test]
    fn rejects_unknown_column() {
        let err = SimTrace::read_csv("sweep,x\n0,1\n1,2\n".as_bytes(), "V1").unwrap_err();
        assert!(matches!(err, TraceError::BadHeader(c) if c == "x"));
    }
}
