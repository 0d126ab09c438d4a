//! Detection oracle: flags suspect lines from a netlist and its DC trace.
//!
//! [`RuleDetector`] is the deterministic default. Anything implementing
//! [`Detector`] can stand in for it, including the chat-backed detector in
//! [`crate::agent::llm`].

mod rules;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{id_order_key, ElementKind, Netlist};
use crate::simulator::SimTrace;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DetectError {
    #[error("trace does not match netlist: {0}")]
    TraceMismatch(String),
    #[error("detector backend failed: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Rule {
    /// R1: capacitor hanging off a node with no DC path to ground.
    DanglingCapacitor,
    /// R2: MOSFET in one region over the whole sweep.
    StuckMosfet,
    /// R3: node deviates from the golden reference.
    GoldenDeviation,
    /// R4: gate driven by a node pinned to a rail.
    StuckAtRail,
    /// R5: resistor that never carries current.
    ParasiticResistor,
    /// Emulated detector noise.
    FalsePositive,
    /// Verdict from an external detector.
    External,
}

impl Rule {
    pub fn code(self) -> &'static str {
        match self {
            Rule::DanglingCapacitor => "R1",
            Rule::StuckMosfet => "R2",
            Rule::GoldenDeviation => "R3",
            Rule::StuckAtRail => "R4",
            Rule::ParasiticResistor => "R5",
            Rule::FalsePositive => "FP",
            Rule::External => "EXT",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Rule::DanglingCapacitor => "capacitor without a DC path to ground",
            Rule::StuckMosfet => "transistor never changes operating region",
            Rule::GoldenDeviation => "node voltage deviates from the reference design",
            Rule::StuckAtRail => "gate driven by a node stuck at a supply rail",
            Rule::ParasiticResistor => "resistor carries no current at any input",
            Rule::FalsePositive => "flagged by detector noise",
            Rule::External => "flagged by external detector",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.code(), self.describe())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub rule: Rule,
    pub nodes: Vec<String>,
    /// Sweep values at which the rule fired; empty for structural rules.
    pub sweep_points: Vec<f64>,
    pub explanation: String,
}

/// Suspect set `L_sus` plus per-line diagnoses.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionReport {
    pub detector_id: String,
    /// Element ids in natural id order.
    pub suspects: Vec<String>,
    pub diagnoses: BTreeMap<String, Vec<Diagnosis>>,
}

impl DetectionReport {
    pub fn new(detector_id: &str) -> Self {
        DetectionReport {
            detector_id: detector_id.to_string(),
            ..Default::default()
        }
    }

    pub fn is_suspect(&self, id: &str) -> bool {
        self.diagnoses.contains_key(id)
    }

    pub fn add(&mut self, id: &str, diagnosis: Diagnosis) {
        self.diagnoses.entry(id.to_string()).or_default().push(diagnosis);
        if !self.suspects.iter().any(|s| s == id) {
            self.suspects.push(id.to_string());
            self.suspects.sort_by_key(|s| id_order_key(s));
        }
    }

    fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.suspects.retain(|s| keep(s));
        self.diagnoses.retain(|k, _| keep(k));
    }

    /// One JSON object per (suspect, diagnosis) pair.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        #[derive(Serialize)]
        struct Record<'a> {
            detector: &'a str,
            id: &'a str,
            rule: &'a str,
            nodes: &'a [String],
            sweep: &'a [f64],
            explanation: &'a str,
        }
        for id in &self.suspects {
            for d in &self.diagnoses[id] {
                let rec = Record {
                    detector: &self.detector_id,
                    id,
                    rule: d.rule.code(),
                    nodes: &d.nodes,
                    sweep: &d.sweep_points,
                    explanation: &d.explanation,
                };
                serde_json::to_writer(&mut out, &rec)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

pub const NO_SUSPECTS: &str = "NO SUSPECTS: every line passed detection.";

fn format_points(points: &[f64]) -> String {
    points
        .iter()
        .map(|p| format!("{p:.4}").trim_end_matches('0').trim_end_matches('.').to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Feedback text handed to the policy: one block per suspect in id order.
pub fn diagnosis_summary(r: &DetectionReport) -> String {
    if r.suspects.is_empty() {
        return format!("{NO_SUSPECTS}\n");
    }
    let mut out = String::new();
    for id in &r.suspects {
        for d in &r.diagnoses[id] {
            out.push_str(&format!("[{id}] rule {}\n", d.rule));
            if !d.nodes.is_empty() {
                out.push_str(&format!("  nodes: {}\n", d.nodes.join(", ")));
            }
            if d.sweep_points.is_empty() {
                out.push_str("  sweep: structural\n");
            } else {
                out.push_str(&format!("  sweep: {}\n", format_points(&d.sweep_points)));
            }
            out.push_str(&format!("  note: {}\n", d.explanation));
        }
    }
    out
}

/// `|A \ S| / |A| * 100`; an empty `A` reads as full evasion.
pub fn evasion_reward<A: AsRef<str>, S: AsRef<str>>(l_agent: &[A], l_sus: &[S]) -> f64 {
    if l_agent.is_empty() {
        return 100.0;
    }
    let evaded = l_agent
        .iter()
        .filter(|a| !l_sus.iter().any(|s| s.as_ref() == a.as_ref()))
        .count();
    evaded as f64 / l_agent.len() as f64 * 100.0
}

/// What the campaign loop sees after one detection pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub report: DetectionReport,
    pub r_evade: f64,
}

pub trait Detector: Send + Sync {
    fn id(&self) -> &str;

    /// Flag suspects. `round` is the campaign iteration, for detectors with
    /// seeded noise.
    fn detect(&self, n: &Netlist, trace: &SimTrace, round: usize) -> Result<DetectionReport, DetectError>;

    /// Detection plus the reward over the agent's lines.
    fn evaluate(
        &self,
        n: &Netlist,
        trace: &SimTrace,
        round: usize,
        inserted: &[String],
    ) -> Result<Observation, DetectError> {
        let report = self.detect(n, trace, round)?;
        let r_evade = evasion_reward(inserted, &report.suspects);
        Ok(Observation { report, r_evade })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// R3 deviation threshold, volts.
    pub tau_v: f64,
    /// R4 rail proximity margin, volts.
    pub tau_stuck: f64,
    /// R5 bound on the voltage across a resistor, volts.
    pub tol_shunt: f64,
    pub capacitive_rules: bool,
    pub mosfet_rules: bool,
    pub resistor_rules: bool,
    /// Per-element probability of a spurious flag; 0 disables.
    pub false_positive_rate: f64,
    pub false_positive_seed: u64,
    /// Golden trace for R3; absent in attacker-realistic mode.
    #[serde(skip)]
    pub reference: Option<SimTrace>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            tau_v: 0.05,
            tau_stuck: 0.01,
            tol_shunt: 1e-6,
            capacitive_rules: true,
            mosfet_rules: true,
            resistor_rules: true,
            false_positive_rate: 0.0,
            false_positive_seed: 0,
            reference: None,
        }
    }
}

impl DetectorConfig {
    fn kind_enabled(&self, kind: ElementKind) -> bool {
        match kind {
            ElementKind::Resistor => self.resistor_rules,
            ElementKind::Capacitor => self.capacitive_rules,
            ElementKind::Nmos | ElementKind::Pmos => self.mosfet_rules,
            ElementKind::VoltageSource | ElementKind::CurrentSource => false,
        }
    }
}

/// Deterministic rule-based detector.
#[derive(Debug, Clone, Default)]
pub struct RuleDetector {
    pub config: DetectorConfig,
}

impl RuleDetector {
    pub fn new(config: DetectorConfig) -> Self {
        RuleDetector { config }
    }
}

impl Detector for RuleDetector {
    fn id(&self) -> &str {
        "rules"
    }

    fn detect(&self, n: &Netlist, trace: &SimTrace, round: usize) -> Result<DetectionReport, DetectError> {
        check_trace(n, trace)?;
        let cfg = &self.config;
        let mut report = DetectionReport::new(self.id());
        rules::dangling_capacitors(n, &mut report);
        rules::stuck_mosfets(n, trace, &mut report);
        if let Some(reference) = &cfg.reference {
            rules::golden_deviation(n, trace, reference, cfg.tau_v, &mut report)?;
        }
        rules::stuck_at_rail(n, trace, cfg.tau_stuck, &mut report);
        rules::parasitic_resistors(n, trace, cfg.tol_shunt, &mut report);

        if cfg.false_positive_rate > 0.0 {
            let seed = cfg.false_positive_seed ^ (round as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for e in &n.elements {
                let draw: f64 = rng.random();
                if draw < cfg.false_positive_rate && !report.is_suspect(&e.id) {
                    report.add(
                        &e.id,
                        Diagnosis {
                            rule: Rule::FalsePositive,
                            nodes: e.nodes.clone(),
                            sweep_points: Vec::new(),
                            explanation: "spurious flag".into(),
                        },
                    );
                }
            }
        }

        report.retain(|id| n.element(id).is_some_and(|e| cfg.kind_enabled(e.kind())));
        Ok(report)
    }
}

/// The trace must carry exactly the netlist's nodes and elements.
pub fn check_trace(n: &Netlist, trace: &SimTrace) -> Result<(), DetectError> {
    let mut nodes = n.node_inventory();
    let mut trace_nodes = trace.nodes.clone();
    nodes.sort();
    trace_nodes.sort();
    if nodes != trace_nodes {
        return Err(DetectError::TraceMismatch(format!(
            "netlist nodes {nodes:?}, trace nodes {trace_nodes:?}"
        )));
    }
    let mut ids: Vec<&str> = n.elements.iter().map(|e| e.id.as_str()).collect();
    let mut trace_ids: Vec<&str> = trace.elements.iter().map(|e| e.as_str()).collect();
    ids.sort();
    trace_ids.sort();
    if ids != trace_ids {
        return Err(DetectError::TraceMismatch(format!(
            "netlist elements {ids:?}, trace elements {trace_ids:?}"
        )));
    }
    Ok(())
}
