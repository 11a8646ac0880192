//! TOML configuration covering every pipeline stage.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecast::ForecastConfig;
use crate::gps::GpsConfig;
use crate::outcome::{real_alpha, uniform_alpha, CostMode, Mode, OutcomeConfig, PanelAgg};
use crate::policy::PolicyConfig;
use crate::synth::GenConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RulesSection {
    /// Rule file path; empty means the built-in default rule set.
    pub path: String,
    /// Let bound generation see the forecasted next day.
    pub include_predicted_future: bool,
}

impl Default for RulesSection {
    fn default() -> Self {
        RulesSection { path: String::new(), include_predicted_future: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OutcomeSection {
    /// Training-time weights of the bound and cost terms.
    pub beta1: f64,
    pub beta2: f64,
    pub cost_mode: CostMode,
    pub sharpness: f64,
    pub panel_agg: PanelAgg,
}

impl Default for OutcomeSection {
    fn default() -> Self {
        OutcomeSection {
            beta1: 10.0,
            beta2: 10.0,
            cost_mode: CostMode::Real,
            sharpness: 50.0,
            panel_agg: PanelAgg::Mean,
        }
    }
}

impl OutcomeSection {
    pub fn to_outcome(&self, mode: Mode) -> OutcomeConfig {
        OutcomeConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            alpha: match self.cost_mode {
                CostMode::Uniform => uniform_alpha(),
                CostMode::Real => real_alpha(),
            },
            sharpness: self.sharpness,
            mode,
            panel_agg: self.panel_agg,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    /// Bernoulli rates for the random baselines.
    pub random_p: Vec<f64>,
    /// How many test stays get plot-data files.
    pub plot_stays: usize,
    /// Evaluate ΔX against the observed future instead of the forecast.
    pub oracle_future: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { random_p: vec![0.5, 0.75], plot_stays: 3, oracle_future: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct AppConfig {
    pub seed: Seed,
    pub cohort: GenConfig,
    pub rules: RulesSection,
    pub forecaster: ForecastConfig,
    pub gps: GpsConfig,
    pub policy: PolicyConfig,
    pub outcome: OutcomeSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Default for Seed {
    fn default() -> Self {
        Seed(17)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {0}: {1}")]
    Io(String, String),
    #[error("bad config: {0}")]
    Parse(String),
    #[error("bad config: {0}")]
    Invalid(String),
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(path.display().to_string(), e.to_string()))?;
        let mut cfg: AppConfig =
            toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.propagate_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Seed(seed);
        self.propagate_seed();
        self
    }

    /// The global seed is the single source of randomness.
    fn propagate_seed(&mut self) {
        self.cohort.seed = self.seed.0;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.cohort.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.outcome
            .to_outcome(Mode::Hard)
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.eval.random_p.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(ConfigError::Invalid("eval.random_p entries must lie in [0, 1]".into()));
        }
        if self.policy.restarts == 0 {
            return Err(ConfigError::Invalid("policy.restarts must be at least 1".into()));
        }
        if !(self.policy.lr > 0.0) || !(self.policy.eta_lambda > 0.0) {
            return Err(ConfigError::Invalid("policy learning rates must be positive".into()));
        }
        Ok(())
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialization")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_are_valid() {
        let cfg = AppConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed.0, 17);
        assert_eq!(cfg.policy.max_epochs, 50);
        assert_eq!(cfg.policy.patience, 7);
        assert_eq!(cfg.policy.eta_lambda, 0.01);
        assert_eq!(cfg.gps.max_epochs, 300);
        assert_eq!(cfg.gps.batch_size, 512);
    }

    #[test]
    fn toml_roundtrip_and_seed_propagation() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(
            f,
            r#"
seed = 99
[cohort]
n_stays = 50
over_order_q = 0.5
[policy]
restarts = 1
[outcome]
cost_mode = "uniform"
"#
        )
        .unwrap();
        let cfg = AppConfig::load(f.path()).unwrap();
        assert_eq!(cfg.seed.0, 99);
        assert_eq!(cfg.cohort.seed, 99);
        assert_eq!(cfg.cohort.n_stays, 50);
        assert_eq!(cfg.cohort.over_order_q, 0.5);
        assert_eq!(cfg.policy.restarts, 1);
        let o = cfg.outcome.to_outcome(Mode::Hard);
        assert!((o.alpha[0] - 0.1).abs() < 1e-12);
        // --seed style override wins over the file
        let cfg = cfg.with_seed(7);
        assert_eq!(cfg.cohort.seed, 7);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "[cohort]\nover_order_q = 1.2\n").unwrap();
        assert!(matches!(AppConfig::load(f.path()), Err(ConfigError::Invalid(_))));
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "seed = \"not a number\"\n").unwrap();
        assert!(matches!(AppConfig::load(f.path()), Err(ConfigError::Parse(_))));
    }
}
