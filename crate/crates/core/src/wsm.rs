//! Checkpoint-merge scheduling.
//!
//! Merging a checkpoint window `[θ_n, …, θ_{n+k}]` with non-negative weights
//! `c_0..c_k` that sum to one is algebraically the same as re-weighting the
//! gradient steps taken after `θ_n`:
//!
//! ```text
//! θ̂_{n+k} = Σ_j c_j θ_{n+j} = θ_n − Σ_i w_i g_{n+i−1},   w_i = Σ_{j≥i} c_j
//! ```
//!
//! so a monotone non-increasing coefficient schedule `1 ≥ w_1 ≥ … ≥ w_k ≥ 0`
//! (a post-hoc learning-rate decay) converts uniquely into merge weights:
//!
//! ```text
//! c_k = w_k,   c_j = w_j − w_{j+1} (1 ≤ j < k),   c_0 = 1 − w_1
//! ```
//!
//! This module implements the conversion in both directions, weighted
//! merging, uniform top-N averaging, and a toy-gradient simulator that checks
//! the equivalence numerically.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Errors from conversions and merges.
#[derive(Debug, Clone, PartialEq)]
pub enum WsmError {
    /// Gradient weights must satisfy `1 ≥ w_1 ≥ … ≥ w_k ≥ 0`; names the
    /// first offending index (1-based, matching the schedule subscripts).
    InvalidGradientWeights { index: usize, reason: String },
    /// Merge weights must be non-negative and sum to 1 within 1e-12.
    InvalidMergeWeights { reason: String },
    /// Checkpoint/weight lengths disagree.
    LengthMismatch { expected: usize, got: usize },
    /// Vector dimensions disagree.
    DimensionMismatch { expected: usize, got: usize },
    /// Empty input where at least one element is required.
    Empty,
    /// `n` outside `1..=len` for top-N averaging.
    TopNOutOfRange { n: usize, len: usize },
}

impl core::fmt::Display for WsmError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::InvalidGradientWeights { index, reason } => {
                write!(f, "invalid gradient weight w_{index}: {reason}")
            }
            Self::InvalidMergeWeights { reason } => write!(f, "invalid merge weights: {reason}"),
            Self::LengthMismatch { expected, got } => {
                write!(f, "expected {expected} weights, got {got}")
            }
            Self::DimensionMismatch { expected, got } => {
                write!(f, "expected dimension {expected}, got {got}")
            }
            Self::Empty => write!(f, "input must be non-empty"),
            Self::TopNOutOfRange { n, len } => {
                write!(f, "top-N out of range: n = {n}, checkpoints = {len}")
            }
        }
    }
}

impl core::error::Error for WsmError {}

/// Monotone non-increasing gradient decay coefficients `w_1..w_k`, bounded
/// by `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientWeights {
    w: Vec<f64>,
}

impl GradientWeights {
    pub fn new(w: Vec<f64>) -> Result<Self, WsmError> {
        let mut prev = 1.0;
        for (i, &wi) in w.iter().enumerate() {
            if !wi.is_finite() {
                return Err(WsmError::InvalidGradientWeights {
                    index: i + 1,
                    reason: String::from("not finite"),
                });
            }
            if wi > prev {
                let reason = if i == 0 {
                    String::from("exceeds 1")
                } else {
                    String::from("violates monotone non-increasing order")
                };
                return Err(WsmError::InvalidGradientWeights {
                    index: i + 1,
                    reason,
                });
            }
            if wi < 0.0 {
                return Err(WsmError::InvalidGradientWeights {
                    index: i + 1,
                    reason: String::from("negative"),
                });
            }
            prev = wi;
        }
        Ok(Self { w })
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

/// Non-negative checkpoint weights `c_0..c_k` summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct MergeWeights {
    c: Vec<f64>,
}

impl MergeWeights {
    pub fn new(c: Vec<f64>) -> Result<Self, WsmError> {
        if c.is_empty() {
            return Err(WsmError::Empty);
        }
        let mut sum = 0.0;
        for &cj in &c {
            if !cj.is_finite() || cj < 0.0 {
                return Err(WsmError::InvalidMergeWeights {
                    reason: alloc::format!("weight {cj} is negative or non-finite"),
                });
            }
            sum += cj;
        }
        if crate::math::abs(sum - 1.0) > 1e-12 {
            return Err(WsmError::InvalidMergeWeights {
                reason: alloc::format!("weights sum to {sum}, not 1"),
            });
        }
        Ok(Self { c })
    }

    pub fn values(&self) -> &[f64] {
        &self.c
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A window of `k + 1` equal-dimension parameter vectors starting at
/// checkpoint index `base_index`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointSeries {
    pub base_index: usize,
    vectors: Vec<Vec<f64>>,
    dimension: usize,
}

impl CheckpointSeries {
    pub fn new(base_index: usize, vectors: Vec<Vec<f64>>) -> Result<Self, WsmError> {
        let Some(first) = vectors.first() else {
            return Err(WsmError::Empty);
        };
        let dimension = first.len();
        if dimension == 0 {
            return Err(WsmError::Empty);
        }
        for v in &vectors {
            if v.len() != dimension {
                return Err(WsmError::DimensionMismatch {
                    expected: dimension,
                    got: v.len(),
                });
            }
        }
        Ok(Self {
            base_index,
            vectors,
            dimension,
        })
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }
}

/// Converts a decay schedule into checkpoint merge weights (the unique
/// solution of the gradient-reweighting identity). The result has one more
/// entry than the input and sums to 1 by telescoping.
pub fn decay_to_merge_weights(w: &GradientWeights) -> Result<MergeWeights, WsmError> {
    let k = w.len();
    let wv = w.values();
    let mut c = vec![0.0; k + 1];
    if k == 0 {
        c[0] = 1.0;
        return Ok(MergeWeights { c });
    }
    c[0] = 1.0 - wv[0];
    for j in 1..k {
        c[j] = wv[j - 1] - wv[j];
    }
    c[k] = wv[k - 1];
    Ok(MergeWeights { c })
}

/// Recovers the decay schedule from merge weights by suffix summation:
/// `w_i = Σ_{j≥i} c_j`. Exact inverse of [`decay_to_merge_weights`].
pub fn merge_to_gradient_weights(c: &MergeWeights) -> Result<GradientWeights, WsmError> {
    let cv = c.values();
    let k = cv.len() - 1;
    let mut w = vec![0.0; k];
    let mut suffix = 0.0;
    for i in (1..=k).rev() {
        suffix += cv[i];
        w[i - 1] = suffix;
    }
    // Suffix sums of a non-negative simplex are monotone and bounded; clamp
    // the float dust so the constructor invariant holds exactly.
    for wi in w.iter_mut() {
        *wi = wi.clamp(0.0, 1.0);
    }
    for i in (1..k).rev() {
        if w[i] > w[i - 1] {
            w[i - 1] = w[i];
        }
    }
    GradientWeights::new(w)
}

/// Element-wise weighted sum of the series under merge weights.
pub fn merge_checkpoints(
    series: &CheckpointSeries,
    c: &MergeWeights,
) -> Result<Vec<f64>, WsmError> {
    if c.len() != series.vectors().len() {
        return Err(WsmError::LengthMismatch {
            expected: series.vectors().len(),
            got: c.len(),
        });
    }
    let mut out = vec![0.0; series.dimension()];
    for (vector, &weight) in series.vectors().iter().zip(c.values()) {
        for (o, &x) in out.iter_mut().zip(vector) {
            *o += weight * x;
        }
    }
    Ok(out)
}

/// Uniform average of the `n` highest-scoring checkpoints. Ties are broken
/// toward the later checkpoint index (fresher data wins).
pub fn top_n_average(checkpoints: &[(Vec<f64>, f64)], n: usize) -> Result<Vec<f64>, WsmError> {
    if checkpoints.is_empty() {
        return Err(WsmError::Empty);
    }
    if n == 0 || n > checkpoints.len() {
        return Err(WsmError::TopNOutOfRange {
            n,
            len: checkpoints.len(),
        });
    }
    let dimension = checkpoints[0].0.len();
    for (v, _) in checkpoints {
        if v.len() != dimension {
            return Err(WsmError::DimensionMismatch {
                expected: dimension,
                got: v.len(),
            });
        }
    }
    let mut order: Vec<usize> = (0..checkpoints.len()).collect();
    // Descending score, later index first on ties.
    order.sort_by(|&a, &b| {
        checkpoints[b]
            .1
            .total_cmp(&checkpoints[a].1)
            .then(b.cmp(&a))
    });
    let mut out = vec![0.0; dimension];
    let inv = 1.0 / n as f64;
    for &idx in order.iter().take(n) {
        for (o, &x) in out.iter_mut().zip(&checkpoints[idx].0) {
            *o += inv * x;
        }
    }
    Ok(out)
}

/// Outcome of [`simulate_equivalence`].
#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    /// Merge of the reconstructed checkpoint window.
    pub merged: Vec<f64>,
    /// Direct decay-weighted update from the base point.
    pub decayed: Vec<f64>,
    /// Largest absolute element-wise difference between the two.
    pub max_abs_diff: f64,
}

/// Builds the checkpoint trajectory `θ_{n+j} = θ_n − Σ_{i≤j} g_i` from fixed
/// gradient steps, merges it under the weights derived from `w`, and compares
/// against the directly decay-weighted update `θ_n − Σ w_i g_i`.
///
/// The gradients are supplied as fixed vectors (learning rate folded in),
/// which is exactly the independence assumption behind the identity; the
/// difference is float dust.
pub fn simulate_equivalence(
    gradients: &[Vec<f64>],
    theta_n: &[f64],
    w: &GradientWeights,
) -> Result<EquivalenceReport, WsmError> {
    if w.len() != gradients.len() {
        return Err(WsmError::LengthMismatch {
            expected: gradients.len(),
            got: w.len(),
        });
    }
    let dim = theta_n.len();
    if dim == 0 {
        return Err(WsmError::Empty);
    }
    for g in gradients {
        if g.len() != dim {
            return Err(WsmError::DimensionMismatch {
                expected: dim,
                got: g.len(),
            });
        }
    }

    let mut vectors = Vec::with_capacity(gradients.len() + 1);
    let mut current = theta_n.to_vec();
    vectors.push(current.clone());
    for g in gradients {
        for (x, &gi) in current.iter_mut().zip(g) {
            *x -= gi;
        }
        vectors.push(current.clone());
    }
    let series = CheckpointSeries::new(0, vectors)?;
    let merged = merge_checkpoints(&series, &decay_to_merge_weights(w)?)?;

    let mut decayed = theta_n.to_vec();
    for (g, &wi) in gradients.iter().zip(w.values()) {
        for (x, &gi) in decayed.iter_mut().zip(g) {
            *x -= wi * gi;
        }
    }

    let max_abs_diff = merged
        .iter()
        .zip(&decayed)
        .map(|(a, b)| crate::math::abs(a - b))
        .fold(0.0, f64::max);

    Ok(EquivalenceReport {
        merged,
        decayed,
        max_abs_diff,
    })
}
