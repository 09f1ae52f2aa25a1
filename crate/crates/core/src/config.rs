//! Planner configuration documents.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{CostWeights, SAConfig};

const DEFAULT_PLANNER_TOML: &str = include_str!("../data/planner.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostprocessConfig {
    pub bin_threshold: f64,
    pub uniformize: bool,
    pub uniformity_tolerance: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            bin_threshold: 0.5,
            uniformize: true,
            uniformity_tolerance: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    #[serde(rename = "source_strength_U")]
    pub source_strength: f64,
    pub inside_weight: f64,
    pub sa: SAConfig,
    pub cost: CostWeights,
    pub postprocess: PostprocessConfig,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            source_strength: 0.5,
            inside_weight: 1.0,
            sa: SAConfig::default(),
            cost: CostWeights::default(),
            postprocess: PostprocessConfig::default(),
        }
    }
}

impl PlannerConfig {
    /// The shipped default document.
    pub fn default_toml() -> &'static str {
        DEFAULT_PLANNER_TOML
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.sa.validate().map_err(wrap)?;
        self.cost.validate().map_err(wrap)?;
        if !(self.source_strength > 0.0 && self.source_strength.is_finite()) {
            return Err(Error::Config("source_strength_U must be positive".into()));
        }
        if !(self.inside_weight > 0.0) {
            return Err(Error::Config("inside_weight must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.postprocess.bin_threshold) {
            return Err(Error::Config("bin_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }
}
