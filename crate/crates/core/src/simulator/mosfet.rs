//! Level-1 square-law MOSFET, three terminals, no channel-length modulation.

use serde::{Deserialize, Serialize};

use crate::netlist::{Mosfet, Polarity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Cutoff,
    Triode,
    Saturation,
}

/// Drain current and its partial derivatives with respect to the terminal
/// voltages. `id` flows from drain to source through the channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MosEval {
    pub id: f64,
    pub d_vd: f64,
    pub d_vg: f64,
    pub d_vs: f64,
    pub region: Region,
}

/// Channel current for `vds >= 0`: `(i, di/dvgs, di/dvds, region)`.
pub fn channel(vgs: f64, vds: f64, vto: f64, beta: f64) -> (f64, f64, f64, Region) {
    let vov = vgs - vto;
    if vov <= 0.0 {
        (0.0, 0.0, 0.0, Region::Cutoff)
    } else if vds < vov {
        (
            beta * (vov * vds - 0.5 * vds * vds),
            beta * vds,
            beta * (vov - vds),
            Region::Triode,
        )
    } else {
        (0.5 * beta * vov * vov, beta * vov, 0.0, Region::Saturation)
    }
}

/// NMOS evaluation with source/drain swap for reversed bias.
fn nmos(vd: f64, vg: f64, vs: f64, vto: f64, beta: f64) -> MosEval {
    if vd >= vs {
        let (id, gm, gds, region) = channel(vg - vs, vd - vs, vto, beta);
        MosEval {
            id,
            d_vd: gds,
            d_vg: gm,
            d_vs: -gm - gds,
            region,
        }
    } else {
        let (i, gm, gds, region) = channel(vg - vd, vs - vd, vto, beta);
        MosEval {
            id: -i,
            d_vd: gm + gds,
            d_vg: -gm,
            d_vs: -gds,
            region,
        }
    }
}

/// Evaluate a device at terminal voltages. PMOS is the NMOS mirror image:
/// all voltages and the threshold negate, and so does the current, which
/// leaves the partial derivatives unchanged.
pub fn evaluate(m: &Mosfet, vd: f64, vg: f64, vs: f64) -> MosEval {
    let beta = m.beta();
    match m.polarity {
        Polarity::N => nmos(vd, vg, vs, m.vto, beta),
        Polarity::P => {
            let e = nmos(-vd, -vg, -vs, -m.vto, beta);
            MosEval { id: -e.id, ..e }
        }
    }
}

pub fn region(m: &Mosfet, vd: f64, vg: f64, vs: f64) -> Region {
    evaluate(m, vd, vg, vs).region
}
