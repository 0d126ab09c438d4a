//! SPICE netlists: the candidate design the agent mutates.
//!
//! A [`Netlist`] is an ordered list of [`Element`]s plus the `.model` cards
//! they reference. Comments and control cards are carried as opaque metadata
//! so that serialization round-trips, but the simulator never reads them.

mod check;
mod parse;

use std::collections::HashSet;
use std::fmt;
use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::format_value;

pub use check::{CheckResult, RejectReason};
pub use parse::{parse, parse_element_line, ParseError};

/// Canonical ground node name.
pub const GROUND: &str = "0";

/// True for `0` and `gnd` in any case.
pub fn is_ground(node: &str) -> bool {
    node == GROUND || node.eq_ignore_ascii_case("gnd")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ElementKind {
    Resistor,
    Capacitor,
    Nmos,
    Pmos,
    VoltageSource,
    CurrentSource,
}

impl ElementKind {
    /// Kinds the agent may insert, in tie-break order.
    pub const TROJAN_KINDS: [ElementKind; 4] = [
        ElementKind::Resistor,
        ElementKind::Capacitor,
        ElementKind::Nmos,
        ElementKind::Pmos,
    ];

    pub fn prefix(self) -> char {
        match self {
            ElementKind::Resistor => 'R',
            ElementKind::Capacitor => 'C',
            ElementKind::Nmos | ElementKind::Pmos => 'M',
            ElementKind::VoltageSource => 'V',
            ElementKind::CurrentSource => 'I',
        }
    }

    pub fn arity(self) -> usize {
        match self {
            ElementKind::Nmos | ElementKind::Pmos => 3,
            _ => 2,
        }
    }

    pub fn is_mosfet(self) -> bool {
        matches!(self, ElementKind::Nmos | ElementKind::Pmos)
    }

    /// Short label used in reports (`R`, `C`, `NMOS`, `PMOS`, `V`, `I`).
    pub fn label(self) -> &'static str {
        match self {
            ElementKind::Resistor => "R",
            ElementKind::Capacitor => "C",
            ElementKind::Nmos => "NMOS",
            ElementKind::Pmos => "PMOS",
            ElementKind::VoltageSource => "V",
            ElementKind::CurrentSource => "I",
        }
    }
}

impl fmt::Display for ElementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    N,
    P,
}

/// Level-1 MOSFET instance with its model parameters resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Mosfet {
    pub polarity: Polarity,
    pub model: String,
    pub w: Option<f64>,
    pub l: Option<f64>,
    /// Threshold voltage from the model card (negative for PMOS).
    pub vto: f64,
    /// Transconductance parameter from the model card, A/V^2.
    pub kp: f64,
    /// Instance parameters other than W and L, kept for round-tripping.
    pub extra: Vec<(String, f64)>,
}

impl Mosfet {
    /// W/L, with SPICE's equal default geometry when either is missing.
    pub fn aspect(&self) -> f64 {
        match (self.w, self.l) {
            (Some(w), Some(l)) => w / l,
            _ => 1.0,
        }
    }

    pub fn beta(&self) -> f64 {
        self.kp * self.aspect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Device {
    Resistor { resistance: f64 },
    Capacitor { capacitance: f64 },
    Mosfet(Mosfet),
    VoltageSource { dc: f64 },
    CurrentSource { dc: f64 },
}

/// One circuit element line.
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub id: String,
    /// Two nodes for passives and sources, drain/gate/source for MOSFETs.
    pub nodes: Vec<String>,
    pub device: Device,
}

impl Element {
    pub fn resistor(id: &str, a: &str, b: &str, resistance: f64) -> Self {
        Self::two_terminal(id, a, b, Device::Resistor { resistance })
    }

    pub fn capacitor(id: &str, a: &str, b: &str, capacitance: f64) -> Self {
        Self::two_terminal(id, a, b, Device::Capacitor { capacitance })
    }

    pub fn voltage_source(id: &str, pos: &str, neg: &str, dc: f64) -> Self {
        Self::two_terminal(id, pos, neg, Device::VoltageSource { dc })
    }

    pub fn current_source(id: &str, pos: &str, neg: &str, dc: f64) -> Self {
        Self::two_terminal(id, pos, neg, Device::CurrentSource { dc })
    }

    /// MOSFET bound to `model`, copying its polarity, VTO and KP.
    pub fn mosfet(id: &str, [d, g, s]: [&str; 3], model: &ModelCard, w: f64, l: f64) -> Self {
        Element {
            id: id.to_string(),
            nodes: vec![d.to_string(), g.to_string(), s.to_string()],
            device: Device::Mosfet(Mosfet {
                polarity: model.polarity,
                model: model.name.clone(),
                w: Some(w),
                l: Some(l),
                vto: model.vto(),
                kp: model.kp(),
                extra: Vec::new(),
            }),
        }
    }

    fn two_terminal(id: &str, a: &str, b: &str, device: Device) -> Self {
        Element {
            id: id.to_string(),
            nodes: vec![a.to_string(), b.to_string()],
            device,
        }
    }

    pub fn kind(&self) -> ElementKind {
        match &self.device {
            Device::Resistor { .. } => ElementKind::Resistor,
            Device::Capacitor { .. } => ElementKind::Capacitor,
            Device::Mosfet(m) => match m.polarity {
                Polarity::N => ElementKind::Nmos,
                Polarity::P => ElementKind::Pmos,
            },
            Device::VoltageSource { .. } => ElementKind::VoltageSource,
            Device::CurrentSource { .. } => ElementKind::CurrentSource,
        }
    }

    pub fn mosfet_params(&self) -> Option<&Mosfet> {
        match &self.device {
            Device::Mosfet(m) => Some(m),
            _ => None,
        }
    }

    /// Canonical SPICE line for this element.
    pub fn to_line(&self) -> String {
        let mut line = format!("{} {}", self.id, self.nodes.join(" "));
        match &self.device {
            Device::Resistor { resistance: v }
            | Device::Capacitor { capacitance: v }
            | Device::VoltageSource { dc: v }
            | Device::CurrentSource { dc: v } => {
                line.push(' ');
                line.push_str(&format_value(*v));
            }
            Device::Mosfet(m) => {
                line.push(' ');
                line.push_str(&m.model);
                if let Some(w) = m.w {
                    line.push_str(&format!(" W={}", format_value(w)));
                }
                if let Some(l) = m.l {
                    line.push_str(&format!(" L={}", format_value(l)));
                }
                for (k, v) in &m.extra {
                    line.push_str(&format!(" {k}={}", format_value(*v)));
                }
            }
        }
        line
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_line())
    }
}

/// A `.model` card for an NMOS or PMOS device.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCard {
    pub name: String,
    pub polarity: Polarity,
    /// Lower-cased parameter names in source order.
    pub params: Vec<(String, f64)>,
}

impl ModelCard {
    pub fn new(name: &str, polarity: Polarity, vto: f64, kp: f64) -> Self {
        ModelCard {
            name: name.to_string(),
            polarity,
            params: vec![("vto".into(), vto), ("kp".into(), kp)],
        }
    }

    fn param(&self, key: &str) -> Option<f64> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    /// Threshold voltage; SPICE level-1 default is 0.
    pub fn vto(&self) -> f64 {
        self.param("vto").unwrap_or(0.0)
    }

    /// Transconductance; SPICE level-1 default is 2e-5 A/V^2.
    pub fn kp(&self) -> f64 {
        self.param("kp").unwrap_or(2e-5)
    }

    pub fn to_line(&self) -> String {
        let kind = match self.polarity {
            Polarity::N => "nmos",
            Polarity::P => "pmos",
        };
        let mut line = format!(".model {} {kind}", self.name);
        for (k, v) in &self.params {
            line.push_str(&format!(" {k}={}", format_value(*v)));
        }
        line
    }
}

/// Where a netlist came from; not part of structural equality.
#[derive(Debug, Clone, Default)]
pub struct SourceMeta {
    pub path: Option<PathBuf>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Netlist {
    pub title: String,
    pub elements: Vec<Element>,
    pub models: Vec<ModelCard>,
    /// Full `*` comment lines, in order.
    pub comments: Vec<String>,
    /// Control cards other than `.model` and `.end`, verbatim.
    pub controls: Vec<String>,
    pub meta: SourceMeta,
}

impl PartialEq for Netlist {
    fn eq(&self, other: &Self) -> bool {
        self.title == other.title
            && self.elements == other.elements
            && self.models == other.models
            && self.comments == other.comments
            && self.controls == other.controls
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetlistError {
    #[error("element `{0}` not found")]
    IdNotFound(String),
    #[error("insertion rejected: {0}")]
    Rejected(RejectReason),
}

impl Netlist {
    pub fn new(title: &str) -> Self {
        Netlist {
            title: title.to_string(),
            ..Default::default()
        }
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        parse(text)
    }

    /// Canonical SPICE text; see [`crate::units::format_value`] for numbers.
    pub fn to_spice(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.title);
        out.push('\n');
        for c in &self.comments {
            out.push_str(c);
            out.push('\n');
        }
        for e in &self.elements {
            out.push_str(&e.to_line());
            out.push('\n');
        }
        for m in &self.models {
            out.push_str(&m.to_line());
            out.push('\n');
        }
        for c in &self.controls {
            out.push_str(c);
            out.push('\n');
        }
        out.push_str(".end\n");
        out
    }

    pub fn element(&self, id: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.id == id)
    }

    pub fn model(&self, name: &str) -> Option<&ModelCard> {
        self.models
            .iter()
            .find(|m| m.name.eq_ignore_ascii_case(name))
    }

    /// First model card of the given polarity.
    pub fn model_for(&self, polarity: Polarity) -> Option<&ModelCard> {
        self.models.iter().find(|m| m.polarity == polarity)
    }

    /// Non-ground nodes in order of first appearance.
    pub fn node_inventory(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut nodes = Vec::new();
        for node in self.elements.iter().flat_map(|e| e.nodes.iter()) {
            if !is_ground(node) && seen.insert(node.as_str()) {
                nodes.push(node.clone());
            }
        }
        nodes
    }

    /// `N`: the number of non-ground nodes.
    pub fn node_count(&self) -> usize {
        self.node_inventory().len()
    }

    pub fn has_ground_connection(&self) -> bool {
        self.elements
            .iter()
            .any(|e| e.nodes.iter().any(|n| is_ground(n)))
    }

    pub fn syntax_check(&self, candidate: &Element) -> CheckResult {
        check::syntax_check(candidate, self)
    }

    /// Insert `element` at a slot drawn from `rng`.
    ///
    /// The slot is uniform over the `len + 1` gaps between existing element
    /// lines, so successive insertions scatter through the netlist instead of
    /// piling up at the end.
    pub fn insert<R: Rng + ?Sized>(&self, element: Element, rng: &mut R) -> Result<Netlist, NetlistError> {
        if let CheckResult::Reject(reason) = self.syntax_check(&element) {
            return Err(NetlistError::Rejected(reason));
        }
        let pos = sample_position(self.elements.len(), rng);
        Ok(self.insert_at(element, pos))
    }

    /// Insert without a syntax check at a fixed index (clamped to the end).
    pub fn insert_at(&self, element: Element, pos: usize) -> Netlist {
        let mut next = self.clone();
        let pos = pos.min(next.elements.len());
        next.elements.insert(pos, element);
        next
    }

    pub fn remove(&self, id: &str) -> Result<Netlist, NetlistError> {
        let idx = self
            .elements
            .iter()
            .position(|e| e.id == id)
            .ok_or_else(|| NetlistError::IdNotFound(id.to_string()))?;
        let mut next = self.clone();
        next.elements.remove(idx);
        Ok(next)
    }
}

/// Uniform insertion slot in `0..=len`.
pub fn sample_position<R: Rng + ?Sized>(len: usize, rng: &mut R) -> usize {
    rng.random_range(0..=len)
}

/// Sort key giving natural id order: `C9 < C10 < M12 < R1`.
pub fn id_order_key(id: &str) -> (String, u64, String) {
    let mut chars = id.chars();
    let prefix = chars.next().map(|c| c.to_ascii_uppercase().to_string()).unwrap_or_default();
    let rest: String = chars.collect();
    let number = rest.parse::<u64>().unwrap_or(u64::MAX);
    (prefix, number, rest)
}
