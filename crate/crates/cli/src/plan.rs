//! Partition-plan JSON schema for the pipeline simulator.
//!
//! ```json
//! {
//!   "p": 5,
//!   "v": 1,
//!   "layers": [
//!     {"kind": "dense"},
//!     {"kind": "moe", "fwd_cost": 1.2},
//!     {"kind": "mtp", "sublayers": 1}
//!   ],
//!   "costs": {"dense_fwd": 0.5},
//!   "split_mtp": {"transformer_fraction": 0.7},
//!   "assignment": [[[0, 1]], [[2, 3]]],
//!   "recompute": {"moe": "fast_expert"}
//! }
//! ```
//!
//! `costs` overrides the default per-kind forward costs (backward defaults
//! to twice forward; `act_memory` defaults to the forward cost); per-layer
//! fields override both. When `split_mtp` is present, MTP blocks are split
//! before `assignment` is interpreted, so the assignment indexes the
//! post-split layer list.

use serde::{Deserialize, Serialize};
use sparse_forge_core::pipeline::{
    split_mtp, LayerKind, LayerSpec, PartitionPlan, RecomputeMode, RecomputePolicy,
    DEFAULT_MTP_TRANSFORMER_FRACTION,
};

use crate::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub p: usize,
    pub v: usize,
    pub layers: Vec<LayerEntry>,
    #[serde(default)]
    pub costs: Option<CostTable>,
    #[serde(default)]
    pub split_mtp: Option<SplitMtp>,
    pub assignment: Vec<Vec<Vec<usize>>>,
    #[serde(default)]
    pub recompute: Option<RecomputeTable>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub kind: KindName,
    /// Transformer sublayers of an MTP block (defaults to 1).
    #[serde(default)]
    pub sublayers: Option<usize>,
    #[serde(default)]
    pub fwd_cost: Option<f64>,
    #[serde(default)]
    pub bwd_cost: Option<f64>,
    #[serde(default)]
    pub act_memory: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum KindName {
    Embedding,
    Dense,
    Moe,
    Mtp,
    MtpTransformer,
    MtpLoss,
    LmLoss,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostTable {
    pub embedding_fwd: Option<f64>,
    pub dense_fwd: Option<f64>,
    pub moe_fwd: Option<f64>,
    pub mtp_fwd: Option<f64>,
    pub mtp_transformer_fwd: Option<f64>,
    pub mtp_loss_fwd: Option<f64>,
    pub lm_loss_fwd: Option<f64>,
    /// Backward cost as a multiple of forward (default 2).
    pub bwd_multiplier: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitMtp {
    pub transformer_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecomputeTable {
    pub embedding: Option<ModeName>,
    pub dense: Option<ModeName>,
    pub moe: Option<ModeName>,
    pub mtp: Option<ModeName>,
    pub mtp_transformer: Option<ModeName>,
    pub mtp_loss: Option<ModeName>,
    pub lm_loss: Option<ModeName>,
    pub mtp_transformer_fraction: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    None,
    Full,
    MtpPartial,
    FastExpert,
}

impl From<ModeName> for RecomputeMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::None => RecomputeMode::None,
            ModeName::Full => RecomputeMode::Full,
            ModeName::MtpPartial => RecomputeMode::MtpPartial,
            ModeName::FastExpert => RecomputeMode::FastExpert,
        }
    }
}

impl PlanFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("plan: {e}")))
    }

    /// Materializes the layer list and partition plan.
    pub fn build(&self) -> Result<(PartitionPlan, Vec<LayerSpec>)> {
        let costs = self.costs.clone().unwrap_or_default();
        let bwd_mult = costs.bwd_multiplier.unwrap_or(2.0);
        let mut layers = Vec::with_capacity(self.layers.len());
        for entry in &self.layers {
            let kind = match entry.kind {
                KindName::Embedding => LayerKind::Embedding,
                KindName::Dense => LayerKind::Dense,
                KindName::Moe => LayerKind::MoE,
                KindName::Mtp => LayerKind::Mtp {
                    sublayers: entry.sublayers.unwrap_or(1),
                },
                KindName::MtpTransformer => LayerKind::MtpTransformer,
                KindName::MtpLoss => LayerKind::MtpLoss,
                KindName::LmLoss => LayerKind::LmLoss,
            };
            let table_fwd = match entry.kind {
                KindName::Embedding => costs.embedding_fwd,
                KindName::Dense => costs.dense_fwd,
                KindName::Moe => costs.moe_fwd,
                KindName::Mtp => costs.mtp_fwd,
                KindName::MtpTransformer => costs.mtp_transformer_fwd,
                KindName::MtpLoss => costs.mtp_loss_fwd,
                KindName::LmLoss => costs.lm_loss_fwd,
            };
            let default = LayerSpec::with_defaults(kind);
            let fwd = entry.fwd_cost.or(table_fwd).unwrap_or(default.fwd_cost);
            layers.push(LayerSpec {
                kind,
                fwd_cost: fwd,
                bwd_cost: entry.bwd_cost.unwrap_or(bwd_mult * fwd),
                act_memory: entry.act_memory.unwrap_or(fwd),
            });
        }

        if let Some(split) = &self.split_mtp {
            let fraction = split
                .transformer_fraction
                .unwrap_or(DEFAULT_MTP_TRANSFORMER_FRACTION);
            layers = split_mtp(&layers, fraction).map_err(CliError::validation)?;
        }

        let mut recompute = RecomputePolicy::default();
        if let Some(table) = &self.recompute {
            if let Some(m) = table.embedding {
                recompute.embedding = m.into();
            }
            if let Some(m) = table.dense {
                recompute.dense = m.into();
            }
            if let Some(m) = table.moe {
                recompute.moe = m.into();
            }
            if let Some(m) = table.mtp {
                recompute.mtp = m.into();
            }
            if let Some(m) = table.mtp_transformer {
                recompute.mtp_transformer = m.into();
            }
            if let Some(m) = table.mtp_loss {
                recompute.mtp_loss = m.into();
            }
            if let Some(m) = table.lm_loss {
                recompute.lm_loss = m.into();
            }
            if let Some(f) = table.mtp_transformer_fraction {
                recompute.mtp_transformer_fraction = f;
            }
        }

        let plan = PartitionPlan {
            pp: self.p,
            vpp: self.v,
            assignment: self.assignment.clone(),
            recompute,
        };
        plan.validate(layers.len()).map_err(CliError::validation)?;
        Ok((plan, layers))
    }
}
