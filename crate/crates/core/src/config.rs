//! Pipeline configuration and its validation.
//!
//! The on-disk form is a flat TOML document whose keys are exactly the
//! field names of [`PipelineConfig`]. Unknown keys are rejected. Missing
//! keys fall back to [`PipelineConfig::default`].

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use crate::error::ConfigViolation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Number of most recent layers whose ranks feed the consistency metric.
    pub window_size: usize,
    /// Strength of the consistency reward (0 disables it).
    pub consistency_weight: f64,
    /// Fraction of non-retained evictable tokens routed to merging.
    pub merge_ratio: f64,
    /// Total cache budget in tokens, summed over layers.
    pub budget_total: usize,
    /// Blend weight of the spatially smoothed score.
    pub smoothing_alpha: f64,
    /// Weight of activation versus key diversity in the triage score.
    pub hybrid_beta: f64,
    /// Minimum diversity for a historical token to become an anchor.
    pub dap_tau: f64,
    /// Fraction of historical cached tokens protected as anchors.
    pub dap_eta: f64,
    /// Maximum number of distinct historical frames contributing anchors.
    pub dap_kmax: usize,
    pub num_layers: usize,
    pub tokens_per_frame: usize,
    pub rng_seed: u64,
    /// Hidden width of the toy transformer.
    pub model_dim: usize,
    /// Key/value width of the toy transformer.
    pub key_dim: usize,
    /// Inner FFN width of the toy transformer.
    pub ffn_dim: usize,
    /// FFN residual scale applied in every toy block.
    pub residual_scale: f64,
    /// Explicit per-layer budgets, overriding the even split of `budget_total`.
    pub layer_budgets: Option<Vec<usize>>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_size: 5,
            consistency_weight: 0.5,
            merge_ratio: 0.15,
            budget_total: 200_000,
            smoothing_alpha: 0.5,
            hybrid_beta: 0.5,
            dap_tau: 0.2,
            dap_eta: 0.05,
            dap_kmax: 3,
            num_layers: 8,
            tokens_per_frame: 64,
            rng_seed: 0,
            model_dim: 32,
            key_dim: 16,
            ffn_dim: 64,
            residual_scale: 1.0,
            layer_budgets: None,
        }
    }
}

impl PipelineConfig {
    /// Budget of layer `layer`: the override if present, otherwise
    /// `budget_total / num_layers` with the remainder handed to the earliest
    /// layers.
    pub fn layer_budget(&self, layer: usize) -> usize {
        if let Some(b) = &self.layer_budgets {
            return b[layer];
        }
        let l = self.num_layers.max(1);
        self.budget_total / l + usize::from(layer < self.budget_total % l)
    }

    pub fn layer_budgets(&self) -> Vec<usize> {
        (0..self.num_layers).map(|l| self.layer_budget(l)).collect()
    }

    /// Sets a uniform per-layer budget and keeps `budget_total` consistent.
    pub fn with_uniform_layer_budget(mut self, per_layer: usize) -> Self {
        self.budget_total = per_layer * self.num_layers;
        self.layer_budgets = None;
        self
    }

    pub fn violations(&self) -> Vec<ConfigViolation> {
        let mut v = Vec::new();
        let mut bad =
            |field: &'static str, message: String| v.push(ConfigViolation { field, message });
        let unit = |x: f64| (0.0..=1.0).contains(&x);

        if self.window_size < 1 {
            bad("window_size", "must be at least 1".into());
        }
        if !(self.consistency_weight.is_finite() && self.consistency_weight >= 0.0) {
            bad(
                "consistency_weight",
                format!("must be finite and >= 0, got {}", self.consistency_weight),
            );
        }
        if !unit(self.merge_ratio) {
            bad(
                "merge_ratio",
                format!("must lie in [0, 1], got {}", self.merge_ratio),
            );
        }
        if !unit(self.smoothing_alpha) {
            bad(
                "smoothing_alpha",
                format!("must lie in [0, 1], got {}", self.smoothing_alpha),
            );
        }
        if !unit(self.hybrid_beta) {
            bad(
                "hybrid_beta",
                format!("must lie in [0, 1], got {}", self.hybrid_beta),
            );
        }
        if !self.dap_tau.is_finite() {
            bad("dap_tau", format!("must be finite, got {}", self.dap_tau));
        }
        if !unit(self.dap_eta) {
            bad(
                "dap_eta",
                format!("must lie in [0, 1], got {}", self.dap_eta),
            );
        }
        if self.num_layers < 1 {
            bad("num_layers", "must be at least 1".into());
        }
        if self.tokens_per_frame < 1 {
            bad("tokens_per_frame", "must be at least 1".into());
        }
        for (field, dim) in [
            ("model_dim", self.model_dim),
            ("key_dim", self.key_dim),
            ("ffn_dim", self.ffn_dim),
        ] {
            if dim < 1 {
                bad(field, "must be at least 1".into());
            }
        }
        if !(self.residual_scale.is_finite() && self.residual_scale > 0.0) {
            bad(
                "residual_scale",
                format!("must be finite and > 0, got {}", self.residual_scale),
            );
        }

        let m = self.tokens_per_frame;
        match &self.layer_budgets {
            Some(b) => {
                if b.len() != self.num_layers {
                    bad(
                        "layer_budgets",
                        format!("expected {} entries, got {}", self.num_layers, b.len()),
                    );
                } else if let Some(l) = b.iter().position(|&x| x < m) {
                    bad(
                        "layer_budgets",
                        format!(
                            "layer {l} budget {} cannot hold one frame of {m} tokens",
                            b[l]
                        ),
                    );
                }
            }
            None => {
                let per_layer = self.budget_total / self.num_layers.max(1);
                if per_layer < m {
                    bad(
                        "budget_total",
                        format!("per-layer budget {per_layer} cannot hold one frame of {m} tokens"),
                    );
                }
            }
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::ConfigParse(e.message().to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    /// Reads and validates a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::ConfigParse(format!("{}: {e}", path.as_ref().display())))?;
        validate_config(Self::from_toml_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }
}

/// Returns the config unchanged when every range constraint holds, otherwise
/// every violated constraint.
pub fn validate_config(cfg: PipelineConfig) -> Result<PipelineConfig> {
    cfg.validate()?;
    Ok(cfg)
}
