//! Campaign configuration, loadable from TOML.

use serde::{Deserialize, Serialize};

use crate::detector::DetectorConfig;
use crate::metrics::MetricsConfig;
use crate::simulator::{SimOptions, SweepSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    #[default]
    Heuristic,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    #[default]
    Rules,
    Llm,
}

/// Sweep section as written in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SweepSection {
    source: String,
    #[serde(default)]
    start: f64,
    #[serde(default = "default_stop")]
    stop: f64,
    #[serde(default = "default_points")]
    points: usize,
}

fn default_stop() -> f64 {
    2.0
}

fn default_points() -> usize {
    26
}

mod sweep_serde {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(spec: &SweepSpec, s: S) -> Result<S::Ok, S::Error> {
        SweepSection {
            source: spec.source_id.clone(),
            start: spec.start,
            stop: spec.stop,
            points: spec.points,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SweepSpec, D::Error> {
        let s = SweepSection::deserialize(d)?;
        Ok(SweepSpec::new(&s.source, s.start, s.stop, s.points))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    /// Fraction of CUA nodes bounding the number of inserted lines.
    pub alpha: f64,
    /// Consecutive full-evasion iterations required to stop.
    #[serde(rename = "T")]
    pub t: usize,
    pub seed: u64,
    /// Iteration cap; defaults to `10 * L_max`.
    pub hard_cap: Option<usize>,
    #[serde(with = "sweep_serde")]
    pub sweep: SweepSpec,
    pub policy: PolicyKind,
    pub detector_kind: DetectorKind,
    pub detector: DetectorConfig,
    pub simulator: SimOptions,
    pub metrics: MetricsConfig,
    /// Benchmark manifest for corpus runs.
    pub manifest: Option<String>,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            alpha: 0.6,
            t: 3,
            seed: 42,
            hard_cap: None,
            sweep: SweepSpec::new("V1", 0.0, 2.0, 26),
            policy: PolicyKind::Heuristic,
            detector_kind: DetectorKind::Rules,
            detector: DetectorConfig::default(),
            simulator: SimOptions::default(),
            metrics: MetricsConfig::default(),
            manifest: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

impl CampaignConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: CampaignConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(ConfigError(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.t == 0 {
            return Err(ConfigError("T must be at least 1".into()));
        }
        self.sweep.validate().map_err(|e| ConfigError(e.to_string()))?;
        if !(self.detector.tau_v > 0.0) {
            return Err(ConfigError("detector.tau_v must be positive".into()));
        }
        if !(self.detector.tau_stuck >= 0.0) {
            return Err(ConfigError("detector.tau_stuck must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.detector.false_positive_rate) {
            return Err(ConfigError("detector.false_positive_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_with_defaults() {
        let cfg = CampaignConfig::from_toml(
            "alpha = 0.5\nT = 4\nseed = 7\n[sweep]\nsource = \"VIN\"\npoints = 11\n[detector]\nresistor_rules = false\n",
        )
        .unwrap();
        assert_eq!(cfg.t, 4);
        assert_eq!(cfg.sweep, SweepSpec::new("VIN", 0.0, 2.0, 11));
        assert!(!cfg.detector.resistor_rules);
        assert!(cfg.detector.capacitive_rules);
        assert_eq!(cfg.policy, PolicyKind::Heuristic);
    }

    #[test]
    fn schema_violations() {
        assert!(CampaignConfig::from_toml("alpha = -1\n").is_err());
        assert!(CampaignConfig::from_toml("T = 0\n").is_err());
        assert!(CampaignConfig::from_toml("bogus = 1\n").is_err());
        assert!(CampaignConfig::from_toml("[sweep]\nsource = \"V1\"\npoints = 1\n").is_err());
    }

    #[test]
    fn serializes_back() {
        let cfg = CampaignConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(CampaignConfig::from_toml(&text).unwrap(), cfg);
    }
}
