//! Deterministic default policy.
//!
//! Keeps per-type evasion counts, sticks with a type while it evades, and
//! on detection reverts the flagged line, bans its placement and moves to
//! the type with the best smoothed evasion rate.

use std::collections::{HashMap, HashSet};

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Action, CandidateLine, Decision, DecisionContext, IterationRecord, Policy, PolicyError, Proposal};
use crate::netlist::{Element, ElementKind, Netlist, Polarity};

const SAMPLE_RETRIES: usize = 64;
/// Above this many tuples exhaustive enumeration is skipped.
const ENUMERATION_LIMIT: usize = 200_000;

pub const W_CHOICES: [f64; 3] = [0.5e-6, 1e-6, 2e-6];
pub const L_CHOICES: [f64; 2] = [0.5e-6, 1e-6];
pub const C_RANGE: (f64, f64) = (1e-15, 1e-11);
pub const R_RANGE: (f64, f64) = (1e3, 1e6);

/// Placement key: passive terminals are unordered, MOSFET terminals are not.
type Placement = (ElementKind, Vec<String>);

fn placement_key(kind: ElementKind, nodes: &[String]) -> Placement {
    let mut nodes = nodes.to_vec();
    if !kind.is_mosfet() {
        nodes.sort();
    }
    (kind, nodes)
}

#[derive(Debug, Clone, Default)]
pub struct HeuristicPolicy {
    /// `(evaded, detected)` per type.
    stats: HashMap<ElementKind, (u32, u32)>,
    current: Option<ElementKind>,
    banned: HashSet<Placement>,
    /// Placement of each line this policy inserted.
    placements: HashMap<String, Placement>,
    exhausted: HashSet<ElementKind>,
}

impl HeuristicPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    /// Laplace-smoothed evasion rate `(e + 1) / (e + d + 2)`.
    pub fn score(&self, kind: ElementKind) -> f64 {
        let (e, d) = self.stats.get(&kind).copied().unwrap_or((0, 0));
        (e as f64 + 1.0) / (e as f64 + d as f64 + 2.0)
    }

    pub fn record_outcome(&mut self, kind: ElementKind, evaded: bool) {
        let entry = self.stats.entry(kind).or_default();
        if evaded {
            entry.0 += 1;
        } else {
            entry.1 += 1;
        }
    }

    pub fn is_banned(&self, kind: ElementKind, nodes: &[String]) -> bool {
        self.banned.contains(&placement_key(kind, nodes))
    }

    /// Best type by score; ties go to the earlier of R, C, NMOS, PMOS.
    pub fn best_kind(&self, allowed: &[ElementKind]) -> Option<ElementKind> {
        let mut best: Option<(ElementKind, f64)> = None;
        for &k in allowed {
            let s = self.score(k);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((k, s));
            }
        }
        best.map(|(k, _)| k)
    }

    fn usable_kinds(&self, n: &Netlist) -> Vec<ElementKind> {
        ElementKind::TROJAN_KINDS
            .into_iter()
            .filter(|k| !self.exhausted.contains(k))
            .filter(|k| match k {
                ElementKind::Nmos => n.model_for(Polarity::N).is_some(),
                ElementKind::Pmos => n.model_for(Polarity::P).is_some(),
                _ => true,
            })
            .collect()
    }

    fn sample_nodes(&self, kind: ElementKind, nodes: &[String], rng: &mut ChaCha8Rng) -> Option<Vec<String>> {
        let arity = kind.arity();
        if nodes.len() < arity {
            return None;
        }
        for _ in 0..SAMPLE_RETRIES {
            let pick: Vec<String> = nodes.choose_multiple(rng, arity).cloned().collect();
            if !self.is_banned(kind, &pick) {
                return Some(pick);
            }
        }
        let total = (0..arity).fold(1usize, |acc, i| acc.saturating_mul(nodes.len() - i));
        if total > ENUMERATION_LIMIT {
            return None;
        }
        let mut open = Vec::new();
        enumerate(nodes, arity, &mut Vec::new(), &mut |tuple| {
            if !kind.is_mosfet() && !tuple.windows(2).all(|w| w[0] < w[1]) {
                return;
            }
            if !self.is_banned(kind, tuple) {
                open.push(tuple.to_vec());
            }
        });
        open.choose(rng).cloned()
    }

    fn fresh_id(kind: ElementKind, n: &Netlist, rng: &mut ChaCha8Rng) -> String {
        let prefix = kind.prefix();
        let taken = |id: &str| n.elements.iter().any(|e| e.id.eq_ignore_ascii_case(id));
        for _ in 0..SAMPLE_RETRIES {
            let id = format!("{prefix}{}", rng.random_range(1..=999));
            if !taken(&id) {
                return id;
            }
        }
        (1000..).map(|k| format!("{prefix}{k}")).find(|id| !taken(id)).expect("unbounded ids")
    }

    fn build(kind: ElementKind, id: &str, nodes: &[String], n: &Netlist, rng: &mut ChaCha8Rng) -> Element {
        match kind {
            ElementKind::Resistor => Element::resistor(id, &nodes[0], &nodes[1], log_uniform(rng, R_RANGE)),
            ElementKind::Capacitor => Element::capacitor(id, &nodes[0], &nodes[1], log_uniform(rng, C_RANGE)),
            ElementKind::Nmos | ElementKind::Pmos => {
                let pol = if kind == ElementKind::Nmos { Polarity::N } else { Polarity::P };
                let model = n.model_for(pol).expect("usable kinds have a model");
                let w = *W_CHOICES.choose(rng).expect("non-empty");
                let l = *L_CHOICES.choose(rng).expect("non-empty");
                Element::mosfet(id, [&nodes[0], &nodes[1], &nodes[2]], model, w, l)
            }
            _ => unreachable!("sources are never proposed"),
        }
    }
}

fn enumerate(nodes: &[String], arity: usize, prefix: &mut Vec<String>, visit: &mut dyn FnMut(&[String])) {
    if prefix.len() == arity {
        visit(prefix);
        return;
    }
    for n in nodes {
        if prefix.contains(n) {
            continue;
        }
        prefix.push(n.clone());
        enumerate(nodes, arity, prefix, visit);
        prefix.pop();
    }
}

/// Log-uniform draw rounded to three significant figures.
fn log_uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    let v = (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();
    let mag = 10f64.powi(v.log10().floor() as i32 - 2);
    ((v / mag).round() * mag).clamp(lo, hi)
}

impl Policy for HeuristicPolicy {
    fn name(&self) -> &str {
        "heuristic"
    }

    fn decide(&mut self, ctx: &mut DecisionContext<'_>) -> Result<Decision, PolicyError> {
        let state = ctx.state;
        let r = state.last_r_evade();

        if r < 100.0 {
            if let Some(report) = state.last_report() {
                let flagged = state.inserted.iter().rev().find(|id| report.is_suspect(id));
                if let Some(id) = flagged {
                    return Ok(Decision {
                        thought: format!("R_evade {r:.1}%: {id} was flagged, reverting to the last undetected netlist"),
                        proposal: Proposal::Revert(id.clone()),
                    });
                }
            }
        }

        let candidate = &state.candidate;
        loop {
            let usable = self.usable_kinds(candidate);
            if usable.is_empty() {
                return Err(PolicyError::NodeExhaustion);
            }
            let kind = match self.current {
                Some(k) if r >= 100.0 && usable.contains(&k) => k,
                _ => self.best_kind(&usable).expect("usable is non-empty"),
            };
            let Some(nodes) = self.sample_nodes(kind, ctx.available_nodes, ctx.rng) else {
                self.exhausted.insert(kind);
                self.current = None;
                continue;
            };
            let id = Self::fresh_id(kind, candidate, ctx.rng);
            let element = Self::build(kind, &id, &nodes, candidate, ctx.rng);
            let why = if self.current == Some(kind) {
                "keeping the type that last evaded"
            } else {
                "choosing the type with the best evasion record"
            };
            self.current = Some(kind);
            self.placements.insert(id.clone(), placement_key(kind, &nodes));
            return Ok(Decision {
                thought: format!(
                    "R_evade {r:.1}%: {why}; inserting {} on {}",
                    kind.label(),
                    nodes.join(", ")
                ),
                proposal: Proposal::Insert(CandidateLine::Element(element)),
            });
        }
    }

    fn notify(&mut self, record: &IterationRecord) {
        let Action::Insert { id, .. } = &record.action else {
            return;
        };
        let Some(placement) = self.placements.get(id).cloned() else {
            return;
        };
        let detected = record.sim_failure.is_some() || record.report.is_suspect(id);
        self.record_outcome(placement.0, !detected);
        if detected {
            self.banned.insert(placement);
            self.current = None;
        }
    }
}
