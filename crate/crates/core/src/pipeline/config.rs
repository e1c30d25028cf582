use std::path::Path;

use serde::{Deserialize, Serialize};

use super::synth::SyntheticSpec;
use super::PipelineError;
use crate::reasoning::{DEFAULT_SHIFT_EPSILON, DEFAULT_THRESHOLD};
use crate::surprise::{AblationConfig, ScoringConfig, DEFAULT_CLAMP_MAX};
use crate::typicality::TrainingConfig;

/// Every tunable of the engine. Loaded from TOML; missing keys take defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub grid_size: usize,
    pub smoothing: f64,
    pub entropy_floor: f64,
    pub clamp_max: f64,
    pub shift_epsilon: f64,
    pub decision_threshold: f64,
    pub holdout_fraction: f64,
    /// Required by stochastic commands; may also be given on the command line.
    pub seed: Option<u64>,
    pub ablation: AblationConfig,
    pub synthetic: SyntheticSpec,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Self {
            grid_size: t.grid_size,
            smoothing: t.smoothing,
            entropy_floor: t.entropy_floor,
            clamp_max: DEFAULT_CLAMP_MAX,
            shift_epsilon: DEFAULT_SHIFT_EPSILON,
            decision_threshold: DEFAULT_THRESHOLD,
            holdout_fraction: t.holdout_fraction,
            seed: None,
            ablation: AblationConfig::FULL,
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let config: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let fail = |m: String| Err(PipelineError::Config(m));
        if !(1..=64).contains(&self.grid_size) {
            return fail(format!("grid_size {} outside 1..=64", self.grid_size));
        }
        for (name, v) in [
            ("smoothing", self.smoothing),
            ("entropy_floor", self.entropy_floor),
            ("clamp_max", self.clamp_max),
            ("shift_epsilon", self.shift_epsilon),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.decision_threshold > 0.0 && self.decision_threshold < 1.0) {
            return fail(format!("decision_threshold {} outside (0, 1)", self.decision_threshold));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return fail(format!("holdout_fraction {} outside [0, 1)", self.holdout_fraction));
        }
        self.synthetic.validate()
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            grid_size: self.grid_size,
            smoothing: self.smoothing,
            entropy_floor: self.entropy_floor,
            holdout_fraction: self.holdout_fraction,
        }
    }

    pub fn scoring(&self) -> ScoringConfig {
        ScoringConfig {
            ablation: self.ablation,
            clamp_max: self.clamp_max,
        }
    }

    pub fn require_seed(&self) -> Result<u64, PipelineError> {
        self.seed.ok_or(PipelineError::MissingSeed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let c = EngineConfig::from_toml_str("grid_size = 4\nseed = 9\n[ablation]\nuse_location = false\n").unwrap();
        assert_eq!(c.grid_size, 4);
        assert_eq!(c.seed, Some(9));
        assert!(!c.ablation.use_location && c.ablation.use_relevance);
        assert_eq!(c.decision_threshold, 0.95);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(EngineConfig::from_toml_str("decision_threshold = 1.5").is_err());
        assert!(EngineConfig::from_toml_str("grid_size = 0").is_err());
        assert!(EngineConfig::from_toml_str("gird_size = 4").is_err());
        assert!(matches!(
            EngineConfig::default().require_seed(),
            Err(PipelineError::MissingSeed)
        ));
    }
}
