//! Static reference Trojans inserted at seeded random nodes.
//!
//! Two structural patterns for side-by-side comparison with campaign output:
//! a charge-accumulation trigger (capacitor and two NMOS) and a
//! conditional trigger pair driving a pull-down payload. Both attack the
//! benchmark's output node; the sensing nodes are drawn at random.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::Detector;
use crate::metrics::{compare, Comparison, MetricsConfig, MetricsError, MetricsRecord};
use crate::netlist::{
    is_ground, sample_position, CheckResult, Device, Element, ModelCard, Netlist, Polarity, RejectReason,
};
use crate::simulator::{dc_sweep, SimOptions, SimTrace, SweepSpec};

/// Placements tried before giving up on a netlist.
pub const MAX_PLACEMENTS: usize = 5;

pub const TROJAN_NMOS: &str = "tjn";
pub const TROJAN_PMOS: &str = "tjp";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    A2Like,
    DeltaLike,
}

impl Pattern {
    pub const ALL: [Pattern; 2] = [Pattern::A2Like, Pattern::DeltaLike];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::A2Like => "a2-like",
            Pattern::DeltaLike => "delta-like",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pattern {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "a2" | "a2-like" => Ok(Pattern::A2Like),
            "delta" | "delta-like" => Ok(Pattern::DeltaLike),
            _ => Err(BaselineError::UnknownPattern(s.to_string())),
        }
    }
}

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("unknown baseline pattern `{0}` (expected a2-like or delta-like)")]
    UnknownPattern(String),
    #[error("output node `{0}` is not in the netlist")]
    UnknownVictim(String),
    #[error("netlist has no nodes to attach to")]
    NoNodes,
    #[error("template line {id} is invalid after substitution: {reason}")]
    InvalidTemplate { id: String, reason: RejectReason },
    #[error("no simulable placement after {attempts} attempts; last failure: {last}")]
    Unsimulable { attempts: usize, last: String },
    #[error("clean netlist does not simulate: {0}")]
    CleanSimulation(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Detection(#[from] crate::detector::DetectError),
}

/// Node roles a template is instantiated with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    /// Nodes the trigger senses, in template order.
    pub sense: Vec<String>,
    /// Supply node for pull-up devices.
    pub rail: String,
    /// Attacked node.
    pub victim: String,
    /// Internal trigger node created by the template.
    pub trigger: String,
}

fn fresh_id(n: &Netlist, prefix: char, taken: &[String]) -> String {
    (1..)
        .map(|k| format!("{prefix}{k}"))
        .find(|id| {
            !n.elements.iter().any(|e| e.id.eq_ignore_ascii_case(id)) && !taken.iter().any(|t| t.eq_ignore_ascii_case(id))
        })
        .expect("unbounded ids")
}

fn fresh_node(n: &Netlist, stem: &str) -> String {
    let inventory = n.node_inventory();
    std::iter::once(stem.to_string())
        .chain((1..).map(|k| format!("{stem}{k}")))
        .find(|c| !inventory.contains(c))
        .expect("unbounded names")
}

/// Positive node of the first grounded DC source other than `swept`, or
/// `None` when the netlist has no such supply.
pub fn supply_rail(n: &Netlist, swept: &str) -> Option<String> {
    n.elements.iter().find_map(|e| match &e.device {
        Device::VoltageSource { .. } if !e.id.eq_ignore_ascii_case(swept) && is_ground(&e.nodes[1]) && !is_ground(&e.nodes[0]) => {
            Some(e.nodes[0].clone())
        }
        _ => None,
    })
}

/// Netlist with the Trojan model cards available.
fn with_models(n: &Netlist) -> Netlist {
    let mut next = n.clone();
    for card in [
        ModelCard::new(TROJAN_NMOS, Polarity::N, 0.5, 200e-6),
        ModelCard::new(TROJAN_PMOS, Polarity::P, -0.5, 80e-6),
    ] {
        if next.model(&card.name).is_none() {
            next.models.push(card);
        }
    }
    next
}

/// Template elements for `pattern` at `placement`.
pub fn template(pattern: Pattern, n: &Netlist, placement: &Placement) -> Vec<Element> {
    let n = with_models(n);
    let nmos = n.model(TROJAN_NMOS).expect("added above").clone();
    let pmos = n.model(TROJAN_PMOS).expect("added above").clone();
    let mut ids: Vec<String> = Vec::new();
    let mut next = |prefix: char| {
        let id = fresh_id(&n, prefix, &ids);
        ids.push(id.clone());
        id
    };
    let p = placement;
    let t = p.trigger.as_str();
    match pattern {
        Pattern::A2Like => vec![
            Element::mosfet(&next('M'), [&p.sense[0], &p.sense[0], t], &nmos, 2e-6, 0.5e-6),
            Element::capacitor(&next('C'), t, "0", 1e-12),
            Element::mosfet(&next('M'), [&p.victim, t, "0"], &nmos, 400e-6, 0.5e-6),
        ],
        Pattern::DeltaLike => vec![
            Element::mosfet(&next('M'), [t, &p.sense[0], &p.rail], &pmos, 4e-6, 0.5e-6),
            Element::mosfet(&next('M'), [t, &p.sense[1], "0"], &nmos, 1e-6, 0.5e-6),
            Element::mosfet(&next('M'), [&p.victim, t, "0"], &nmos, 400e-6, 0.5e-6),
        ],
    }
}

/// Draw a placement: sensing nodes uniformly from the node inventory.
pub fn draw_placement(
    pattern: Pattern,
    n: &Netlist,
    victim: &str,
    swept: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Placement, BaselineError> {
    let inventory = n.node_inventory();
    if inventory.is_empty() {
        return Err(BaselineError::NoNodes);
    }
    if !inventory.iter().any(|x| x == victim) {
        return Err(BaselineError::UnknownVictim(victim.to_string()));
    }
    let count = match pattern {
        Pattern::A2Like => 1,
        Pattern::DeltaLike => 2,
    };
    let sense = (0..count)
        .map(|_| inventory.choose(rng).expect("non-empty").clone())
        .collect();
    let rail = supply_rail(n, swept).unwrap_or_else(|| inventory.choose(rng).expect("non-empty").clone());
    Ok(Placement {
        sense,
        rail,
        victim: victim.to_string(),
        trigger: fresh_node(n, "tjtrig"),
    })
}

/// Insert the template at scattered positions, checking that every line
/// would be accepted by the syntax check given the rest of the Trojan.
pub fn instantiate(
    pattern: Pattern,
    n: &Netlist,
    placement: &Placement,
    rng: &mut ChaCha8Rng,
) -> Result<(Netlist, Vec<String>), BaselineError> {
    let elements = template(pattern, n, placement);
    let mut out = with_models(n);
    for e in &elements {
        let pos = sample_position(out.elements.len(), rng);
        out = out.insert_at(e.clone(), pos);
    }
    for e in &elements {
        let rest = out.remove(&e.id).expect("just inserted");
        if let CheckResult::Reject(reason) = rest.syntax_check(e) {
            return Err(BaselineError::InvalidTemplate { id: e.id.clone(), reason });
        }
    }
    Ok((out, elements.into_iter().map(|e| e.id).collect()))
}

#[derive(Debug, Clone)]
pub struct BaselineOutcome {
    pub pattern: Pattern,
    pub netlist: Netlist,
    pub inserted: Vec<String>,
    pub placement: Placement,
    pub trace: SimTrace,
    /// Placements tried, including the successful one.
    pub attempts: usize,
}

/// Seeded placement with up to [`MAX_PLACEMENTS`] tries until the inserted
/// netlist simulates to full convergence.
pub fn insert_baseline(
    pattern: Pattern,
    n: &Netlist,
    victim: &str,
    sweep: &SweepSpec,
    opts: &SimOptions,
    seed: u64,
) -> Result<BaselineOutcome, BaselineError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = String::new();
    for attempt in 1..=MAX_PLACEMENTS {
        let placement = draw_placement(pattern, n, victim, &sweep.source_id, &mut rng)?;
        let (netlist, inserted) = instantiate(pattern, n, &placement, &mut rng)?;
        match dc_sweep(&netlist, sweep, opts) {
            Ok(trace) if trace.all_converged() => {
                return Ok(BaselineOutcome {
                    pattern,
                    netlist,
                    inserted,
                    placement,
                    trace,
                    attempts: attempt,
                })
            }
            Ok(trace) => {
                last = format!(
                    "{} sweep points did not converge",
                    trace.converged.iter().filter(|c| !**c).count()
                )
            }
            Err(e) => last = e.to_string(),
        }
    }
    Err(BaselineError::Unsimulable {
        attempts: MAX_PLACEMENTS,
        last,
    })
}

/// Everything needed to score one baseline insertion.
pub struct BaselineRun<'a> {
    pub name: &'a str,
    pub netlist: &'a Netlist,
    pub output_node: &'a str,
    pub area: f64,
    pub sweep: &'a SweepSpec,
    pub sim: &'a SimOptions,
    pub metrics: &'a MetricsConfig,
    pub detector: &'a dyn Detector,
}

/// Insert `pattern`, simulate clean and infected designs, and score the
/// result. `R_evade` is measured with `run.detector`; `n_it` is zero.
pub fn run_baseline(
    run: &BaselineRun<'_>,
    pattern: Pattern,
    seed: u64,
) -> Result<(BaselineOutcome, MetricsRecord), BaselineError> {
    let clean = dc_sweep(run.netlist, run.sweep, run.sim).map_err(|e| BaselineError::CleanSimulation(e.to_string()))?;
    let outcome = insert_baseline(pattern, run.netlist, run.output_node, run.sweep, run.sim, seed)?;
    let obs = run.detector.evaluate(&outcome.netlist, &outcome.trace, 1, &outcome.inserted)?;
    let record = compare(
        &Comparison {
            name: run.name,
            clean: run.netlist,
            clean_trace: &clean,
            trojan: &outcome.netlist,
            trojan_trace: &outcome.trace,
            output_node: run.output_node,
            area: run.area,
            n_it: 0,
            r_evade: obs.r_evade,
        },
        run.metrics,
    )?;
    Ok((outcome, record))
}
