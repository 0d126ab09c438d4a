//! Validation of a proposed element against the current netlist.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::{is_ground, Device, Element, ElementKind, Netlist};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", content = "detail")]
pub enum RejectReason {
    /// Id suffix is not a positive integer, e.g. `Mx`.
    BadIdentifierSuffix(String),
    /// Id prefix letter does not match the element kind.
    IdPrefixMismatch(String),
    DuplicateId(String),
    UnknownNode(String),
    ArityMismatch { expected: usize, found: usize },
    InvalidValue(String),
    UnknownModel(String),
    /// Sources are part of the test bench, not Trojan payloads.
    DisallowedKind(String),
    /// The proposal did not parse as an element line.
    Malformed(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::BadIdentifierSuffix(id) => {
                write!(f, "identifier `{id}` must be a prefix letter followed by a positive integer")
            }
            RejectReason::IdPrefixMismatch(id) => {
                write!(f, "identifier `{id}` does not match the component kind")
            }
            RejectReason::DuplicateId(id) => write!(f, "identifier `{id}` is already in use"),
            RejectReason::UnknownNode(node) => {
                write!(f, "node `{node}` is not among the available circuit nodes")
            }
            RejectReason::ArityMismatch { expected, found } => {
                write!(f, "expected {expected} nodes, found {found}")
            }
            RejectReason::InvalidValue(what) => write!(f, "invalid value: {what}"),
            RejectReason::UnknownModel(m) => write!(f, "unknown or mismatched model `{m}`"),
            RejectReason::DisallowedKind(k) => write!(f, "component kind {k} may not be inserted"),
            RejectReason::Malformed(msg) => write!(f, "malformed line: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CheckResult {
    Accept,
    Reject(RejectReason),
}

impl CheckResult {
    pub fn is_accept(&self) -> bool {
        matches!(self, CheckResult::Accept)
    }
}

fn valid_suffix(id: &str) -> bool {
    let suffix = &id[id.char_indices().nth(1).map_or(id.len(), |(i, _)| i)..];
    !suffix.is_empty()
        && suffix.bytes().all(|b| b.is_ascii_digit())
        && suffix.parse::<u64>().is_ok_and(|n| n > 0)
}

fn positive_finite(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

pub(super) fn syntax_check(e: &Element, n: &Netlist) -> CheckResult {
    match check(e, n) {
        Ok(()) => CheckResult::Accept,
        Err(reason) => CheckResult::Reject(reason),
    }
}

fn check(e: &Element, n: &Netlist) -> Result<(), RejectReason> {
    let kind = e.kind();
    if matches!(kind, ElementKind::VoltageSource | ElementKind::CurrentSource) {
        return Err(RejectReason::DisallowedKind(kind.label().to_string()));
    }
    let prefix = e.id.chars().next().map(|c| c.to_ascii_uppercase());
    if prefix != Some(kind.prefix()) {
        return Err(RejectReason::IdPrefixMismatch(e.id.clone()));
    }
    if !valid_suffix(&e.id) {
        return Err(RejectReason::BadIdentifierSuffix(e.id.clone()));
    }
    if n.elements.iter().any(|x| x.id.eq_ignore_ascii_case(&e.id)) {
        return Err(RejectReason::DuplicateId(e.id.clone()));
    }
    if e.nodes.len() != kind.arity() {
        return Err(RejectReason::ArityMismatch {
            expected: kind.arity(),
            found: e.nodes.len(),
        });
    }
    let inventory = n.node_inventory();
    for node in &e.nodes {
        if !is_ground(node) && !inventory.contains(node) {
            return Err(RejectReason::UnknownNode(node.clone()));
        }
    }
    match &e.device {
        Device::Resistor { resistance: v } if !positive_finite(*v) => {
            Err(RejectReason::InvalidValue(format!("resistance {v}")))
        }
        Device::Capacitor { capacitance: v } if !positive_finite(*v) => {
            Err(RejectReason::InvalidValue(format!("capacitance {v}")))
        }
        Device::Mosfet(m) => {
            for (name, v) in [("W", m.w), ("L", m.l)] {
                if let Some(v) = v {
                    if !positive_finite(v) {
                        return Err(RejectReason::InvalidValue(format!("{name} {v}")));
                    }
                }
            }
            match n.model(&m.model) {
                Some(card) if card.polarity == m.polarity => Ok(()),
                _ => Err(RejectReason::UnknownModel(m.model.clone())),
            }
        }
        _ => Ok(()),
    }
}
