//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use atgen_core::netlist::{ModelCard, Polarity};
use atgen_core::{Element, Netlist};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Dense Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// `k x k` grid of resistors, corner driven by `vs` through `rs`, opposite
/// corner grounded through `rg`. Returns the netlist and the node voltages
/// from an independent nodal solve.
pub fn mesh(k: usize, vs: f64, rs: f64, rg: f64) -> (Netlist, HashMap<String, f64>) {
    let name = |i: usize, j: usize| format!("g{i}_{j}");
    let idx = |i: usize, j: usize| i * k + j;
    let mut n = Netlist::new("mesh");
    n.elements.push(Element::voltage_source("V1", "src", "0", vs));
    n.elements.push(Element::resistor("RS", "src", &name(0, 0), rs));
    n.elements.push(Element::resistor("RG", &name(k - 1, k - 1), "0", rg));
    let size = k * k;
    let mut g = vec![vec![0.0; size]; size];
    let mut rhs = vec![0.0; size];
    let mut id = 0;
    for i in 0..k {
        for j in 0..k {
            for (di, dj) in [(0, 1), (1, 0)] {
                let (p, q) = (i + di, j + dj);
                if p < k && q < k {
                    id += 1;
                    let r = 100.0 * (1 + (7 * id) % 13) as f64;
                    n.elements.push(Element::resistor(&format!("R{id}"), &name(i, j), &name(p, q), r));
                    let (a, b) = (idx(i, j), idx(p, q));
                    g[a][a] += 1.0 / r;
                    g[b][b] += 1.0 / r;
                    g[a][b] -= 1.0 / r;
                    g[b][a] -= 1.0 / r;
                }
            }
        }
    }
    g[0][0] += 1.0 / rs;
    rhs[0] += vs / rs;
    g[size - 1][size - 1] += 1.0 / rg;
    let x = dense_solve(g, rhs);
    let mut want = HashMap::new();
    for i in 0..k {
        for j in 0..k {
            want.insert(name(i, j), x[idx(i, j)]);
        }
    }
    (n, want)
}

/// R-2R ladder of `stages` sections driven by `v`, terminated so every
/// node sees `R` to ground on its right: node `k` sits at `v / 2^k`.
pub fn r2r_ladder(stages: usize, v: f64) -> Netlist {
    let mut text = format!("ladder\nV1 n0 0 {v}\n");
    for k in 1..=stages {
        text += &format!("RS{k} n{} n{k} 1k\nRP{k} n{k} 0 2k\n", k - 1);
    }
    text += &format!("RT n{stages} 0 2k\n");
    Netlist::parse(&text).unwrap()
}

/// Loaded Wheatstone bridge and its Thevenin solution `(v_a, v_b, i_load)`.
pub fn bridge() -> (Netlist, f64, f64, f64) {
    let (v, r1, r2, r3, r4, r5) = (5.0, 1e3, 2.2e3, 3.3e3, 4.7e3, 680.0);
    let n = Netlist::parse(&format!(
        "bridge\nV1 t 0 {v}\nR1 t a {r1}\nR2 a 0 {r2}\nR3 t b {r3}\nR4 b 0 {r4}\nR5 a b {r5}\n"
    ))
    .unwrap();
    let par = |x: f64, y: f64| x * y / (x + y);
    let (va0, vb0) = (v * r2 / (r1 + r2), v * r4 / (r3 + r4));
    let i5 = (va0 - vb0) / (par(r1, r2) + par(r3, r4) + r5);
    (n, va0 - i5 * par(r1, r2), vb0 + i5 * par(r3, r4), i5)
}

/// Square-law NMOS drain current for `vds >= 0`.
pub fn square_law(vgs: f64, vds: f64, vto: f64, beta: f64) -> f64 {
    let vov = vgs - vto;
    if vov <= 0.0 {
        0.0
    } else if vds < vov {
        beta * (vov * vds - vds * vds / 2.0)
    } else {
        beta * vov * vov / 2.0
    }
}

/// Resistor-loaded NMOS inverter used by the nonlinear oracle.
pub const INV_VDD: f64 = 2.0;
pub const INV_RL: f64 = 10e3;
pub const INV_VTO: f64 = 0.5;
pub const INV_KP: f64 = 200e-6;
pub const INV_W: f64 = 2e-6;
pub const INV_L: f64 = 1e-6;

pub fn inverter() -> Netlist {
    Netlist::parse(&format!(
        "inverter\nVDD vdd 0 {INV_VDD}\nV1 in 0 0\nRL vdd out {INV_RL}\nM1 out in 0 nmod W={INV_W} L={INV_L}\n\
         .model nmod nmos vto={INV_VTO} kp={INV_KP}\n"
    ))
    .unwrap()
}

/// Output of the inverter at input `vin`, by bisection on the load-line
/// equation `(VDD - v) / RL = Id(vin, v)`.
pub fn inverter_bisection(vin: f64) -> f64 {
    let beta = INV_KP * INV_W / INV_L;
    let f = |v: f64| (INV_VDD - v) / INV_RL - square_law(vin, v, INV_VTO, beta);
    let (mut lo, mut hi) = (0.0, INV_VDD);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The threshold-trigger benchmark with a window Trojan: a PMOS that
/// conducts for `in < 1.1` in series with an NMOS that conducts for
/// `in > 0.9`, shunting the output to ground inside `[0.9, 1.1]` V.
pub fn window_trojan(clean: &Netlist) -> Netlist {
    let mut n = clean.clone();
    let p = ModelCard::new("ptrig", Polarity::P, -0.4, 2.0);
    let nm = ModelCard::new("ntrig", Polarity::N, 0.9, 2.0);
    n.elements.push(Element::mosfet("M901", ["x", "in", "out"], &p, 1000e-6, 1e-6));
    n.elements.push(Element::mosfet("M902", ["x", "in", "0"], &nm, 1000e-6, 1e-6));
    n.models.push(p);
    n.models.push(nm);
    n
}

/// Random single-element mutation of `n` over its own node inventory.
pub fn mutate(n: &Netlist, rng: &mut ChaCha8Rng) -> Netlist {
    let nodes = n.node_inventory();
    let mut pick = || {
        if rng.random_bool(0.15) {
            "0".to_string()
        } else {
            nodes[rng.random_range(0..nodes.len())].clone()
        }
    };
    let (a, b, c) = (pick(), pick(), pick());
    let tag = 900_000 + rng.random_range(0..1000);
    let e = match rng.random_range(0..4) {
        0 | 1 => Element::resistor(&format!("R{tag}"), &a, &b, 10f64.powf(rng.random_range(1.0..6.0))),
        2 => Element::capacitor(&format!("C{tag}"), &a, &b, 1e-12),
        _ => {
            let model = n.model("nmod").unwrap().clone();
            Element::mosfet(&format!("M{tag}"), [&a, &b, &c], &model, 4e-6, 1e-6)
        }
    };
    n.insert(e, rng).unwrap_or_else(|_| n.clone())
}
