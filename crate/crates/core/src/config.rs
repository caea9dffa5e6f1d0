use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::AnalyticSystem;
use crate::io::{from_json, read_text, sha256_hex, to_json, IoError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Source of the latent dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsSource {
    /// Path to a network weights file.
    Weights(PathBuf),
    /// One of the built-in maps.
    Analytic(AnalyticSystem),
}

fn default_steps() -> usize {
    12
}
fn default_safety() -> f64 {
    1.5
}
fn default_samples() -> usize {
    10_000
}
fn default_pair_scale() -> f64 {
    0.01
}

/// Everything that determines the analysis output. Relative paths are
/// resolved against the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub task: Option<String>,
    pub subdivisions: Vec<usize>,
    #[serde(default = "default_steps")]
    pub rollout_steps: usize,
    /// Fixed ball radius; skips Lipschitz estimation when set.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default = "default_safety")]
    pub safety_factor: f64,
    #[serde(default = "default_samples")]
    pub lipschitz_samples: usize,
    #[serde(default = "default_pair_scale")]
    pub lipschitz_pair_scale: f64,
    #[serde(default)]
    pub extra_samples_per_cell: usize,
    #[serde(default)]
    pub seed: u64,
    pub dynamics: DynamicsSource,
    pub dataset: PathBuf,
    /// Labelled evaluation trajectories; defaults to `dataset`.
    #[serde(default)]
    pub validation: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl AnalysisConfig {
    pub fn parse(text: &str, context: &str) -> Result<Self, ConfigError> {
        let cfg: Self = from_json(text, context)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&read_text(path)?, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.subdivisions.is_empty() || self.subdivisions.iter().any(|&n| n < 2) {
            return bad("subdivisions must list at least 2 cells for every axis");
        }
        if self.rollout_steps < 1 {
            return bad("rollout_steps must be at least 1");
        }
        if !(self.safety_factor >= 1.0 && self.safety_factor.is_finite()) {
            return bad("safety_factor must be finite and at least 1");
        }
        if let Some(d) = self.delta {
            if !(d >= 0.0 && d.is_finite()) {
                return bad("delta must be finite and non-negative");
            }
        }
        if self.lipschitz_samples < 2 {
            return bad("lipschitz_samples must be at least 2");
        }
        if !(self.lipschitz_pair_scale > 0.0 && self.lipschitz_pair_scale.is_finite()) {
            return bad("lipschitz_pair_scale must be positive");
        }
        if let DynamicsSource::Analytic(sys) = &self.dynamics {
            if sys.dim() != self.subdivisions.len() {
                return bad("analytic system dimension does not match subdivisions");
            }
        }
        Ok(())
    }

    /// Digest of the canonical serialization, defaults included.
    pub fn digest(&self) -> String {
        sha256_hex(to_json(self).as_bytes())
    }

    pub fn validation_path(&self) -> &Path {
        self.validation.as_deref().unwrap_or(&self.dataset)
    }

    /// Copy with relative paths anchored at `base`.
    pub fn resolved(&self, base: &Path) -> Self {
        let fix = |p: &Path| {
            if p.is_relative() {
                base.join(p)
            } else {
                p.to_path_buf()
            }
        };
        let mut out = self.clone();
        out.dataset = fix(&self.dataset);
        out.validation = self.validation.as_deref().map(fix);
        out.output_dir = fix(&self.output_dir);
        if let DynamicsSource::Weights(p) = &self.dynamics {
            out.dynamics = DynamicsSource::Weights(fix(p));
        }
        out
    }
}
