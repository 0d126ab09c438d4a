//! Modified nodal analysis assembly and the damped Newton solve.
//!
//! Unknowns are the non-ground node voltages followed by one branch current
//! per voltage source. The Jacobian sparsity pattern is fixed per netlist, so
//! it is built once together with the fill-reducing ordering, and each Newton
//! step only refills values and refactors.

use std::collections::HashMap;

use rsparse::data::{Sprs, Symb};

use super::mosfet;
use super::{SimError, SimOptions};
use crate::netlist::{is_ground, Device, Mosfet, Netlist};

/// Conductance stamped across capacitors so DC-open nodes stay solvable.
pub const GMIN_CAP: f64 = 1e-12;
/// Conductance across every MOSFET channel.
pub const GMIN_MOS: f64 = 1e-12;

const MAX_DAMPING_HALVINGS: usize = 8;
const MAX_NODE_STEP: f64 = 2.0;
/// Extra Newton steps after convergence. Near a threshold the square law
/// has a vanishing derivative and Newton slows to linear convergence, so a
/// small last step can still leave a visible voltage error.
const MAX_POLISH_STEPS: usize = 12;
const POLISH_FACTOR: f64 = 1e-3;

type Slot = Option<usize>;

enum Stamp {
    Conductance {
        a: Option<usize>,
        b: Option<usize>,
        g: f64,
        capacitor: bool,
        slots: [Slot; 4],
    },
    VoltageSource {
        p: Option<usize>,
        n: Option<usize>,
        row: usize,
        source: usize,
        slots: [Slot; 4],
    },
    CurrentSource {
        p: Option<usize>,
        n: Option<usize>,
        source: usize,
    },
    Mos {
        d: Option<usize>,
        g: Option<usize>,
        s: Option<usize>,
        model: Mosfet,
        /// rows (d, s) by columns (d, g, s)
        slots: [Slot; 6],
    },
}

/// Netlist compiled to index form with a fixed Jacobian pattern.
pub struct Circuit {
    pub nodes: Vec<String>,
    pub element_ids: Vec<String>,
    /// Element id to index into `sources`.
    pub source_index: HashMap<String, usize>,
    /// Nominal independent source values, overridable per solve.
    pub sources: Vec<f64>,
    n_nodes: usize,
    size: usize,
    stamps: Vec<Stamp>,
    col_ptr: Vec<isize>,
    row_idx: Vec<usize>,
    diag: Vec<usize>,
    symbolic: Symb,
}

struct PatternBuilder {
    entries: Vec<Vec<usize>>,
}

impl PatternBuilder {
    fn mark(&mut self, r: Option<usize>, c: Option<usize>) {
        if let (Some(r), Some(c)) = (r, c) {
            if !self.entries[c].contains(&r) {
                self.entries[c].push(r);
            }
        }
    }
}

impl Circuit {
    pub fn compile(netlist: &Netlist) -> Result<Self, SimError> {
        let nodes = netlist.node_inventory();
        let index: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let idx = |name: &String| -> Option<usize> {
            if is_ground(name) {
                None
            } else {
                index.get(name.as_str()).copied()
            }
        };
        check_grounded(netlist, &nodes, &index)?;

        let n_nodes = nodes.len();
        let n_vsrc = netlist
            .elements
            .iter()
            .filter(|e| matches!(e.device, Device::VoltageSource { .. }))
            .count();
        let size = n_nodes + n_vsrc;

        let mut stamps = Vec::with_capacity(netlist.elements.len());
        let mut sources = Vec::new();
        let mut source_index = HashMap::new();
        let mut next_row = n_nodes;
        for e in &netlist.elements {
            let stamp = match &e.device {
                Device::Resistor { resistance } => Stamp::Conductance {
                    a: idx(&e.nodes[0]),
                    b: idx(&e.nodes[1]),
                    g: 1.0 / resistance,
                    capacitor: false,
                    slots: [None; 4],
                },
                Device::Capacitor { .. } => Stamp::Conductance {
                    a: idx(&e.nodes[0]),
                    b: idx(&e.nodes[1]),
                    g: GMIN_CAP,
                    capacitor: true,
                    slots: [None; 4],
                },
                Device::VoltageSource { dc } => {
                    source_index.insert(e.id.clone(), sources.len());
                    sources.push(*dc);
                    let row = next_row;
                    next_row += 1;
                    Stamp::VoltageSource {
                        p: idx(&e.nodes[0]),
                        n: idx(&e.nodes[1]),
                        row,
                        source: sources.len() - 1,
                        slots: [None; 4],
                    }
                }
                Device::CurrentSource { dc } => {
                    source_index.insert(e.id.clone(), sources.len());
                    sources.push(*dc);
                    Stamp::CurrentSource {
                        p: idx(&e.nodes[0]),
                        n: idx(&e.nodes[1]),
                        source: sources.len() - 1,
                    }
                }
                Device::Mosfet(m) => Stamp::Mos {
                    d: idx(&e.nodes[0]),
                    g: idx(&e.nodes[1]),
                    s: idx(&e.nodes[2]),
                    model: m.clone(),
                    slots: [None; 6],
                },
            };
            stamps.push(stamp);
        }

        let mut pb = PatternBuilder {
            entries: vec![Vec::new(); size],
        };
        for i in 0..size {
            pb.mark(Some(i), Some(i));
        }
        for st in &stamps {
            match st {
                Stamp::Conductance { a, b, .. } => {
                    pb.mark(*a, *b);
                    pb.mark(*b, *a);
                }
                Stamp::VoltageSource { p, n, row, .. } => {
                    for t in [p, n] {
                        pb.mark(*t, Some(*row));
                        pb.mark(Some(*row), *t);
                    }
                }
                Stamp::CurrentSource { .. } => {}
                Stamp::Mos { d, g, s, .. } => {
                    for r in [d, s] {
                        for c in [d, g, s] {
                            pb.mark(*r, *c);
                        }
                    }
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(size + 1);
        let mut row_idx = Vec::new();
        col_ptr.push(0isize);
        for col in pb.entries.iter_mut() {
            col.sort_unstable();
            row_idx.extend_from_slice(col);
            col_ptr.push(row_idx.len() as isize);
        }
        let slot = |r: Option<usize>, c: Option<usize>| -> Slot {
            let (r, c) = (r?, c?);
            let lo = col_ptr[c] as usize;
            let hi = col_ptr[c + 1] as usize;
            row_idx[lo..hi].binary_search(&r).ok().map(|k| lo + k)
        };
        let diag: Vec<usize> = (0..size).map(|i| slot(Some(i), Some(i)).unwrap_or(0)).collect();
        for st in stamps.iter_mut() {
            match st {
                Stamp::Conductance { a, b, slots, .. } => {
                    *slots = [slot(*a, *a), slot(*a, *b), slot(*b, *a), slot(*b, *b)];
                }
                Stamp::VoltageSource { p, n, row, slots, .. } => {
                    *slots = [slot(*p, Some(*row)), slot(Some(*row), *p), slot(*n, Some(*row)), slot(Some(*row), *n)];
                }
                Stamp::CurrentSource { .. } => {}
                Stamp::Mos { d, g, s, slots, .. } => {
                    *slots = [
                        slot(*d, *d),
                        slot(*d, *g),
                        slot(*d, *s),
                        slot(*s, *d),
                        slot(*s, *g),
                        slot(*s, *s),
                    ];
                }
            }
        }

        let mut circuit = Circuit {
            nodes,
            element_ids: netlist.elements.iter().map(|e| e.id.clone()).collect(),
            source_index,
            sources,
            n_nodes,
            size,
            stamps,
            col_ptr,
            row_idx,
            diag,
            symbolic: Symb::new(),
        };
        if size > 0 {
            let pattern = circuit.matrix(vec![1.0; circuit.row_idx.len()]);
            circuit.symbolic = rsparse::sqr(&pattern, 1, false);
        }
        Ok(circuit)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn node_count(&self) -> usize {
        self.n_nodes
    }

    fn matrix(&self, values: Vec<f64>) -> Sprs<f64> {
        Sprs {
            nzmax: values.len(),
            m: self.size,
            n: self.size,
            p: self.col_ptr.clone(),
            i: self.row_idx.clone(),
            x: values,
        }
    }

    /// Residual `f` and Jacobian values `jac` at `x`.
    ///
    /// Node rows hold the sum of currents leaving the node; voltage source
    /// rows hold `v(p) - v(n) - scale * V`. `gshunt` adds a conductance from
    /// every node to ground (gmin stepping).
    fn load(&self, x: &[f64], sources: &[f64], scale: f64, gshunt: f64, f: &mut [f64], jac: &mut [f64]) {
        f.iter_mut().for_each(|v| *v = 0.0);
        jac.iter_mut().for_each(|v| *v = 0.0);
        let v = |i: Option<usize>| i.map_or(0.0, |i| x[i]);
        let add_f = |f: &mut [f64], i: Option<usize>, val: f64| {
            if let Some(i) = i {
                f[i] += val;
            }
        };
        let add_j = |jac: &mut [f64], s: Slot, val: f64| {
            if let Some(s) = s {
                jac[s] += val;
            }
        };
        for st in &self.stamps {
            match st {
                Stamp::Conductance { a, b, g, slots, .. } => {
                    let i = g * (v(*a) - v(*b));
                    add_f(f, *a, i);
                    add_f(f, *b, -i);
                    add_j(jac, slots[0], *g);
                    add_j(jac, slots[1], -g);
                    add_j(jac, slots[2], -g);
                    add_j(jac, slots[3], *g);
                }
                Stamp::VoltageSource { p, n, row, source, slots } => {
                    let j = x[*row];
                    add_f(f, *p, j);
                    add_f(f, *n, -j);
                    f[*row] += v(*p) - v(*n) - scale * sources[*source];
                    add_j(jac, slots[0], 1.0);
                    add_j(jac, slots[1], 1.0);
                    add_j(jac, slots[2], -1.0);
                    add_j(jac, slots[3], -1.0);
                }
                Stamp::CurrentSource { p, n, source } => {
                    let i = scale * sources[*source];
                    add_f(f, *p, i);
                    add_f(f, *n, -i);
                }
                Stamp::Mos { d, g, s, model, slots } => {
                    let (vd, vg, vs) = (v(*d), v(*g), v(*s));
                    let e = mosfet::evaluate(model, vd, vg, vs);
                    let id = e.id + GMIN_MOS * (vd - vs);
                    let (dd, dg, ds) = (e.d_vd + GMIN_MOS, e.d_vg, e.d_vs - GMIN_MOS);
                    add_f(f, *d, id);
                    add_f(f, *s, -id);
                    add_j(jac, slots[0], dd);
                    add_j(jac, slots[1], dg);
                    add_j(jac, slots[2], ds);
                    add_j(jac, slots[3], -dd);
                    add_j(jac, slots[4], -dg);
                    add_j(jac, slots[5], -ds);
                }
            }
        }
        if gshunt > 0.0 {
            for i in 0..self.n_nodes {
                f[i] += gshunt * x[i];
                jac[self.diag[i]] += gshunt;
            }
        }
    }

    /// Solve `J dx = rhs` in place.
    fn linear_solve(&self, jac: Vec<f64>, rhs: &mut [f64]) -> Result<(), SimError> {
        let a = self.matrix(jac);
        let mut symbolic = self.symbolic.clone();
        let lu = rsparse::lu(&a, &mut symbolic, 0.1).map_err(|_| SimError::SingularMatrix { nodes: Vec::new() })?;
        let n = self.size;
        let mut y = vec![0.0; n];
        match &lu.pinv {
            Some(p) => (0..n).for_each(|k| y[p[k] as usize] = rhs[k]),
            None => y.copy_from_slice(rhs),
        }
        rsparse::lsolve(&lu.l, &mut y);
        rsparse::usolve(&lu.u, &mut y);
        match &symbolic.q {
            Some(q) => (0..n).for_each(|k| rhs[q[k] as usize] = y[k]),
            None => rhs.copy_from_slice(&y),
        }
        if rhs.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(SimError::SingularMatrix { nodes: Vec::new() })
        }
    }

    fn residual_norm(&self, x: &[f64], sources: &[f64], scale: f64, gshunt: f64, f: &mut [f64], jac: &mut [f64]) -> f64 {
        self.load(x, sources, scale, gshunt, f, jac);
        f.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Damped Newton from `x`. Returns iterations used on success.
    fn newton(
        &self,
        x: &mut Vec<f64>,
        sources: &[f64],
        scale: f64,
        gshunt: f64,
        opts: &SimOptions,
        best: &mut f64,
    ) -> Result<usize, SimError> {
        let nnz = self.row_idx.len();
        let mut f = vec![0.0; self.size];
        let mut jac = vec![0.0; nnz];
        let mut f_trial = vec![0.0; self.size];
        let mut jac_trial = vec![0.0; nnz];
        let mut norm = self.residual_norm(x, sources, scale, gshunt, &mut f, &mut jac);
        let mut converged_at = None;
        for iter in 1..=opts.max_iter + MAX_POLISH_STEPS {
            if converged_at.is_none() && iter > opts.max_iter {
                break;
            }
            let mut dx: Vec<f64> = f.iter().map(|v| -v).collect();
            self.linear_solve(jac.clone(), &mut dx)?;
            let node_step = dx[..self.n_nodes].iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if node_step > MAX_NODE_STEP {
                let k = MAX_NODE_STEP / node_step;
                dx.iter_mut().for_each(|v| *v *= k);
            }
            let mut alpha = 1.0;
            let mut trial: Vec<f64> = Vec::with_capacity(self.size);
            let mut trial_norm = f64::INFINITY;
            for _ in 0..=MAX_DAMPING_HALVINGS {
                trial.clear();
                trial.extend(x.iter().zip(&dx).map(|(a, b)| a + alpha * b));
                trial_norm = self.residual_norm(&trial, sources, scale, gshunt, &mut f_trial, &mut jac_trial);
                if trial_norm <= norm || !trial_norm.is_finite() && alpha < 1e-2 {
                    break;
                }
                alpha *= 0.5;
            }
            if let Some(done) = converged_at {
                if !(trial_norm <= norm.max(opts.tol_res)) {
                    return Ok(done);
                }
            }
            if !trial_norm.is_finite() {
                return Err(SimError::NonConvergence {
                    iterations: iter,
                    best_residual: *best,
                });
            }
            let step = dx[..self.n_nodes]
                .iter()
                .fold(0.0f64, |m, v| m.max((alpha * v).abs()));
            *x = trial.clone();
            std::mem::swap(&mut f, &mut f_trial);
            std::mem::swap(&mut jac, &mut jac_trial);
            norm = trial_norm;
            if gshunt == 0.0 && scale == 1.0 {
                *best = best.min(norm);
            }
            if let Some(done) = converged_at {
                if step <= POLISH_FACTOR * opts.tol_v || iter - done >= MAX_POLISH_STEPS {
                    return Ok(done);
                }
            } else if norm <= opts.tol_res && step <= opts.tol_v {
                if step <= POLISH_FACTOR * opts.tol_v {
                    return Ok(iter);
                }
                converged_at = Some(iter);
            }
        }
        Err(SimError::NonConvergence {
            iterations: opts.max_iter,
            best_residual: *best,
        })
    }

    /// Operating point with the given source values, starting from `guess`.
    ///
    /// Tries plain Newton, then gmin stepping, then source stepping.
    pub fn solve(&self, sources: &[f64], guess: &[f64], opts: &SimOptions) -> Result<(Vec<f64>, usize), SimError> {
        if self.size == 0 {
            return Ok((Vec::new(), 0));
        }
        let mut best = f64::INFINITY;
        let mut total = 0;

        let mut x = guess.to_vec();
        match self.newton(&mut x, sources, 1.0, 0.0, opts, &mut best) {
            Ok(it) => return Ok((x, it)),
            Err(SimError::NonConvergence { iterations, .. }) => total += iterations,
            Err(e) => return Err(e),
        }

        // gmin stepping: a shunt to ground on every node, relaxed by decades
        let mut x = guess.to_vec();
        let mut ok = true;
        for exp in 3..=12 {
            let g = 10f64.powi(-exp);
            match self.newton(&mut x, sources, 1.0, g, opts, &mut best) {
                Ok(it) => total += it,
                Err(SimError::NonConvergence { iterations, .. }) => {
                    total += iterations;
                    ok = false;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if ok {
            match self.newton(&mut x, sources, 1.0, 0.0, opts, &mut best) {
                Ok(it) => return Ok((x, total + it)),
                Err(SimError::NonConvergence { iterations, .. }) => total += iterations,
                Err(e) => return Err(e),
            }
        }

        // source stepping from the all-off state
        let mut x = vec![0.0; self.size];
        let mut scale = 0.0f64;
        let mut step = 0.1f64;
        while scale < 1.0 {
            let target = (scale + step).min(1.0);
            let mut trial = x.clone();
            match self.newton(&mut trial, sources, target, 0.0, opts, &mut best) {
                Ok(it) => {
                    total += it;
                    x = trial;
                    scale = target;
                    step = (step * 2.0).min(0.25);
                }
                Err(SimError::NonConvergence { iterations, .. }) => {
                    total += iterations;
                    step *= 0.5;
                    if step < 1e-4 {
                        return Err(SimError::NonConvergence {
                            iterations: total,
                            best_residual: best,
                        });
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Ok((x, total))
    }

    /// Element currents at solution `x`, in element order.
    ///
    /// Conventions: resistor current flows from its first node to its second;
    /// capacitors report 0; voltage source current enters the `+` terminal
    /// from the circuit; current source and MOSFET currents flow from the
    /// first node through the device to the last.
    pub fn currents(&self, x: &[f64], sources: &[f64]) -> Vec<f64> {
        let v = |i: Option<usize>| i.map_or(0.0, |i| x[i]);
        self.stamps
            .iter()
            .map(|st| match st {
                Stamp::Conductance { capacitor: true, .. } => 0.0,
                Stamp::Conductance { a, b, g, .. } => g * (v(*a) - v(*b)),
                Stamp::VoltageSource { row, .. } => x[*row],
                Stamp::CurrentSource { source, .. } => sources[*source],
                Stamp::Mos { d, g, s, model, .. } => {
                    let (vd, vg, vs) = (v(*d), v(*g), v(*s));
                    mosfet::evaluate(model, vd, vg, vs).id + GMIN_MOS * (vd - vs)
                }
            })
            .collect()
    }
}

/// Union-find over DC-conducting edges; any component without ground makes
/// the MNA matrix singular.
fn check_grounded(netlist: &Netlist, nodes: &[String], index: &HashMap<&str, usize>) -> Result<(), SimError> {
    let ground = nodes.len();
    let mut parent: Vec<usize> = (0..=ground).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let id = |n: &String| if is_ground(n) { ground } else { index[n.as_str()] };
    for e in &netlist.elements {
        let (a, b) = match &e.device {
            Device::CurrentSource { .. } => continue,
            Device::Mosfet(_) => (&e.nodes[0], &e.nodes[2]),
            _ => (&e.nodes[0], &e.nodes[1]),
        };
        let (ra, rb) = (find(&mut parent, id(a)), find(&mut parent, id(b)));
        parent[ra] = rb;
    }
    let root = find(&mut parent, ground);
    let mut floating: HashMap<usize, Vec<String>> = HashMap::new();
    let mut order = Vec::new();
    for (i, n) in nodes.iter().enumerate() {
        let r = find(&mut parent, i);
        if r != root {
            if !floating.contains_key(&r) {
                order.push(r);
            }
            floating.entry(r).or_default().push(n.clone());
        }
    }
    match order.first() {
        Some(r) => Err(SimError::SingularMatrix {
            nodes: floating.remove(r).unwrap_or_default(),
        }),
        None => Ok(()),
    }
}
