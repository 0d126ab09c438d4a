//! The insertion loop: think, act, observe, repeat.
//!
//! Each iteration a [`Policy`] proposes one action, the action is applied
//! to the candidate netlist (after a syntax check for insertions), the
//! candidate is simulated and scored by a [`Detector`], and the resulting
//! evasion reward feeds back into the next decision.

mod config;
pub mod heuristic;
pub mod llm;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{diagnosis_summary, DetectError, DetectionReport, Detector};
use crate::netlist::{parse_element_line, CheckResult, Element, Netlist, RejectReason, GROUND};
use crate::simulator::{dc_sweep, SimError, SimTrace};

pub use config::{CampaignConfig, ConfigError, DetectorKind, PolicyKind};
pub use heuristic::HeuristicPolicy;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("every node tuple for every component type is banned")]
    NodeExhaustion,
    #[error("policy backend failed: {0}")]
    Backend(String),
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("circuit under attack has no non-ground nodes")]
    EmptyCua,
    #[error("circuit under attack does not simulate: {0}")]
    Simulation(#[from] SimError),
    #[error("circuit under attack does not converge at every sweep point")]
    PartialConvergence,
    #[error(transparent)]
    Detection(#[from] DetectError),
    #[error(transparent)]
    Policy(PolicyError),
}

/// A proposed line: either already structured or raw text from a model.
#[derive(Debug, Clone, PartialEq)]
pub enum CandidateLine {
    Element(Element),
    Raw(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Proposal {
    Insert(CandidateLine),
    Revert(String),
    Noop(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub thought: String,
    pub proposal: Proposal,
}

/// Action as applied, recorded in the history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Action {
    Insert { id: String, line: String },
    Revert { id: String },
    Noop { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 1-based iteration number.
    pub iteration: usize,
    pub thought_summary: String,
    pub action: Action,
    /// Present for insertion proposals.
    pub check: Option<CheckResult>,
    pub report: DetectionReport,
    pub r_evade: f64,
    /// Agent lines present after this iteration.
    pub inserted: Vec<String>,
    /// Set when the action broke simulation and was rolled back.
    pub sim_failure: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    /// `R_evade` was 100 for `T` consecutive iterations.
    ConsecutiveEvasion,
    /// The number of inserted lines reached `L_max`.
    UpperBound,
    HardCap,
    /// The policy had nothing left to propose.
    PolicyExhausted,
}

#[derive(Debug, Clone)]
pub struct AgentState {
    pub cua: Netlist,
    pub candidate: Netlist,
    /// `L_agent` in insertion order.
    pub inserted: Vec<String>,
    pub history: Vec<IterationRecord>,
    pub iteration: usize,
    pub rng_seed: u64,
    pub consecutive_full_evasions: usize,
    pub l_max: usize,
    /// Most recent candidate that scored 100, and its agent lines.
    pub last_undetected: Netlist,
    pub last_undetected_inserted: Vec<String>,
    /// Trace of `candidate`.
    pub trace: SimTrace,
    /// Diagnosis text from the last detection pass.
    pub feedback: String,
}

impl AgentState {
    pub fn last_r_evade(&self) -> f64 {
        self.history.last().map_or(100.0, |r| r.r_evade)
    }

    pub fn last_report(&self) -> Option<&DetectionReport> {
        self.history.last().map(|r| &r.report)
    }
}

/// Everything a policy may look at when deciding.
pub struct DecisionContext<'a> {
    pub state: &'a AgentState,
    pub feedback: &'a str,
    /// Nodes a proposal may reference, ground last.
    pub available_nodes: &'a [String],
    pub rng: &'a mut ChaCha8Rng,
}

pub trait Policy {
    fn name(&self) -> &str;
    fn decide(&mut self, ctx: &mut DecisionContext<'_>) -> Result<Decision, PolicyError>;
    fn notify(&mut self, _record: &IterationRecord) {}
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignResult {
    pub final_netlist: Netlist,
    pub history: Vec<IterationRecord>,
    pub n_it: usize,
    pub l_t: usize,
    pub l_max: usize,
    pub t: usize,
    pub r_evade_final: f64,
    pub reason: TerminationReason,
    pub inserted: Vec<String>,
    pub seed: u64,
}

/// `L_max = ceil(alpha * N)`, with a small guard so `0.6 * 20` is 12.
pub fn l_max(alpha: f64, n: usize) -> usize {
    (alpha * n as f64 - 1e-9).ceil().max(0.0) as usize
}

/// One campaign over a circuit under attack.
pub struct Campaign<'a> {
    pub state: AgentState,
    cfg: &'a CampaignConfig,
    detector: &'a dyn Detector,
    rng: ChaCha8Rng,
    available: Vec<String>,
    hard_cap: usize,
}

impl<'a> Campaign<'a> {
    pub fn new(cua: &Netlist, cfg: &'a CampaignConfig, detector: &'a dyn Detector) -> Result<Self, CampaignError> {
        let n = cua.node_count();
        if n == 0 {
            return Err(CampaignError::EmptyCua);
        }
        let trace = dc_sweep(cua, &cfg.sweep, &cfg.simulator)?;
        if !trace.all_converged() {
            return Err(CampaignError::PartialConvergence);
        }
        let report = detector.detect(cua, &trace, 0)?;
        let l_max = l_max(cfg.alpha, n);
        let mut available = cua.node_inventory();
        available.push(GROUND.to_string());
        Ok(Campaign {
            state: AgentState {
                cua: cua.clone(),
                candidate: cua.clone(),
                inserted: Vec::new(),
                history: Vec::new(),
                iteration: 0,
                rng_seed: cfg.seed,
                consecutive_full_evasions: 0,
                l_max,
                last_undetected: cua.clone(),
                last_undetected_inserted: Vec::new(),
                trace,
                feedback: diagnosis_summary(&report),
            },
            cfg,
            detector,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            available,
            hard_cap: cfg.hard_cap.unwrap_or(10 * l_max).max(1),
        })
    }

    pub fn hard_cap(&self) -> usize {
        self.hard_cap
    }

    /// Termination check, in priority order.
    pub fn termination(&self) -> Option<TerminationReason> {
        let s = &self.state;
        if s.consecutive_full_evasions >= self.cfg.t {
            Some(TerminationReason::ConsecutiveEvasion)
        } else if s.inserted.len() >= s.l_max {
            Some(TerminationReason::UpperBound)
        } else if s.iteration >= self.hard_cap {
            Some(TerminationReason::HardCap)
        } else {
            None
        }
    }

    /// One think-act-observe cycle.
    pub fn step(&mut self, policy: &mut dyn Policy) -> Result<(), CampaignError> {
        let decision = {
            let mut ctx = DecisionContext {
                state: &self.state,
                feedback: &self.state.feedback,
                available_nodes: &self.available,
                rng: &mut self.rng,
            };
            policy.decide(&mut ctx).map_err(CampaignError::Policy)?
        };

        let before = self.state.candidate.clone();
        let before_inserted = self.state.inserted.clone();
        let mut check = None;
        let action = match decision.proposal {
            Proposal::Insert(line) => {
                let element = match line {
                    CandidateLine::Element(e) => Ok(e),
                    CandidateLine::Raw(text) => parse_element_line(&text, &self.state.candidate.models)
                        .map_err(|e| RejectReason::Malformed(e.to_string())),
                };
                let verdict = match &element {
                    Ok(e) => self.state.candidate.syntax_check(e),
                    Err(reason) => CheckResult::Reject(reason.clone()),
                };
                check = Some(verdict.clone());
                match (verdict, element) {
                    (CheckResult::Accept, Ok(e)) => {
                        let id = e.id.clone();
                        let line = e.to_line();
                        self.state.candidate = self
                            .state
                            .candidate
                            .insert(e, &mut self.rng)
                            .expect("checked element inserts");
                        self.state.inserted.push(id.clone());
                        Action::Insert { id, line }
                    }
                    (CheckResult::Reject(reason), _) | (_, Err(reason)) => Action::Noop {
                        reason: reason.to_string(),
                    },
                }
            }
            Proposal::Revert(id) => self.revert(&id),
            Proposal::Noop(reason) => Action::Noop { reason },
        };

        let mut sim_failure = None;
        if self.state.candidate != before {
            match dc_sweep(&self.state.candidate, &self.cfg.sweep, &self.cfg.simulator) {
                Ok(trace) if trace.all_converged() => self.state.trace = trace,
                Ok(trace) => {
                    let failed = trace.converged.iter().filter(|c| !**c).count();
                    sim_failure = Some(format!("{failed} sweep points did not converge"));
                }
                Err(e) => sim_failure = Some(e.to_string()),
            }
            if sim_failure.is_some() {
                self.state.candidate = before;
                self.state.inserted = before_inserted;
            }
        }

        self.state.iteration += 1;
        let obs = self.detector.evaluate(
            &self.state.candidate,
            &self.state.trace,
            self.state.iteration,
            &self.state.inserted,
        )?;
        if obs.r_evade >= 100.0 {
            self.state.consecutive_full_evasions += 1;
            self.state.last_undetected = self.state.candidate.clone();
            self.state.last_undetected_inserted = self.state.inserted.clone();
        } else {
            self.state.consecutive_full_evasions = 0;
        }
        let mut feedback = format!("R_evade = {:.1}%\n", obs.r_evade);
        if let Some(msg) = &sim_failure {
            feedback.push_str(&format!("Simulation failed and the change was rolled back: {msg}\n"));
        }
        feedback.push_str(&diagnosis_summary(&obs.report));
        self.state.feedback = feedback;

        let record = IterationRecord {
            iteration: self.state.iteration,
            thought_summary: decision.thought,
            action,
            check,
            report: obs.report,
            r_evade: obs.r_evade,
            inserted: self.state.inserted.clone(),
            sim_failure,
        };
        policy.notify(&record);
        self.state.history.push(record);
        Ok(())
    }

    /// Restore the last configuration that fully evaded detection (the CUA
    /// if none did). When the candidate already is that configuration the
    /// revert changes nothing.
    fn revert(&mut self, id: &str) -> Action {
        if !self.state.inserted.iter().any(|x| x == id) {
            return Action::Noop {
                reason: format!("`{id}` is not an inserted line"),
            };
        }
        self.state.candidate = self.state.last_undetected.clone();
        self.state.inserted = self.state.last_undetected_inserted.clone();
        Action::Revert { id: id.to_string() }
    }

    pub fn finish(self, reason: TerminationReason) -> CampaignResult {
        let s = self.state;
        CampaignResult {
            r_evade_final: s.last_r_evade(),
            n_it: s.iteration,
            l_t: s.inserted.len(),
            l_max: s.l_max,
            t: self.cfg.t,
            final_netlist: s.candidate,
            history: s.history,
            inserted: s.inserted,
            reason,
            seed: self.cfg.seed,
        }
    }
}

/// Run until a termination condition holds.
pub fn run_campaign(
    cua: &Netlist,
    cfg: &CampaignConfig,
    policy: &mut dyn Policy,
    detector: &dyn Detector,
) -> Result<CampaignResult, CampaignError> {
    let mut campaign = Campaign::new(cua, cfg, detector)?;
    loop {
        if let Some(reason) = campaign.termination() {
            return Ok(campaign.finish(reason));
        }
        match campaign.step(policy) {
            Ok(()) => {}
            Err(CampaignError::Policy(PolicyError::NodeExhaustion)) => {
                return Ok(campaign.finish(TerminationReason::PolicyExhausted));
            }
            Err(e) => return Err(e),
        }
    }
}

/// History as JSON lines, one record per iteration.
pub fn history_jsonl(history: &[IterationRecord]) -> String {
    let mut out = String::new();
    for r in history {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn read_history_jsonl(text: &str) -> Result<Vec<IterationRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
