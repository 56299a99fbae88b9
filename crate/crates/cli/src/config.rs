//! JSON run configuration.
//!
//! Every field is optional; command-line flags override file values, and the
//! seed falls back to the `SPARSE_FORGE_SEED` environment variable before
//! defaulting to 0. Unknown keys are rejected by name.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sparse_forge_core::router::RouterConfig;

use crate::{CliError, Result};

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Preferred report format where a command supports both.
    pub format: Option<OutputFormat>,
    pub router: Option<RouterSection>,
    pub scaling: Option<ScalingSection>,
    pub fp8: Option<Fp8Section>,
    pub pipe: Option<PipeSection>,
    pub reward: Option<RewardSection>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RouterSection {
    pub n_experts: Option<usize>,
    pub top_k: Option<usize>,
    pub n_groups: Option<usize>,
    pub top_groups: Option<usize>,
    pub gate_scale: Option<f64>,
    pub update_rate: Option<f64>,
    pub alignment: Option<usize>,
}

impl RouterSection {
    pub fn apply(&self, base: RouterConfig) -> RouterConfig {
        RouterConfig {
            n_experts: self.n_experts.unwrap_or(base.n_experts),
            top_k: self.top_k.unwrap_or(base.top_k),
            n_groups: self.n_groups.unwrap_or(base.n_groups),
            top_groups: self.top_groups.unwrap_or(base.top_groups),
            gate_scale: self.gate_scale.unwrap_or(base.gate_scale),
            update_rate: self.update_rate.unwrap_or(base.update_rate),
            alignment: self.alignment.unwrap_or(base.alignment),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScalingSection {
    /// Huber threshold on log-space residuals.
    pub delta: Option<f64>,
    /// Saturation constant of the activation-ratio transform.
    pub saturation: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Fp8Section {
    pub underflow_threshold: Option<f64>,
    pub distortion_threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PipeSection {
    pub comm_latency: Option<f64>,
    pub tick_resolution: Option<u64>,
    pub recompute_memory_fraction: Option<f64>,
    pub memory_limit: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RewardSection {
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
}

/// Loads a config file. Parse failures report line/column; unknown keys are
/// named in the error.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Seed precedence: explicit flag, then config file, then the
/// `SPARSE_FORGE_SEED` environment variable, then 0.
pub fn resolve_seed(flag: Option<u64>, config: &RunConfig) -> u64 {
    flag.or(config.seed)
        .or_else(|| {
            std::env::var("SPARSE_FORGE_SEED")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0)
}
