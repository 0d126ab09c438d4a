//! Closed-loop insertion of analog hardware Trojans into SPICE netlists.
//!
//! The loop is: a [`agent::Policy`] proposes one element, the netlist module
//! syntax-checks and inserts it, the [`simulator`] runs a DC sweep, a
//! [`detector::Detector`] flags suspect lines, and the fraction of inserted
//! lines that escaped detection becomes the evasion reward for the next step.

pub mod agent;
pub mod baseline;
pub mod corpus;
pub mod detector;
pub mod metrics;
pub mod netlist;
pub mod report;
pub mod simulator;
pub mod units;

pub use agent::{run_campaign, CampaignConfig, CampaignResult, Policy, TerminationReason};
pub use detector::{DetectionReport, Detector, DetectorConfig, RuleDetector};
pub use metrics::MetricsRecord;
pub use netlist::{CheckResult, Element, ElementKind, Netlist, RejectReason};
pub use simulator::{SimTrace, SweepSpec};
