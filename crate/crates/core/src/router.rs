//! Aux-loss-free balanced MoE routing.
//!
//! Selection is biased top-k with group routing: per-expert biases steer
//! which experts are *picked*, while gate values always come from the raw
//! scores, so balancing never distorts the mixture weights. The bias update
//! is the centered sign rule
//!
//! ```text
//! b_i += u · (sign(e_i) − mean(sign(e)))
//! ```
//!
//! over the balancing error `e_i = mean load − load_i` (positive when an
//! expert is starved, negative when overloaded), which keeps the bias vector
//! summing to zero while pushing load toward uniform. Routing is dropless:
//! every token is always assigned exactly `top_k` experts.
//!
//! The module also carries the FP8-oriented routing-map padding: expert
//! token counts are rounded up to an alignment boundary by enabling extra
//! (token, expert) pairs whose routing probability is exactly zero, which
//! leaves the routed mixture untouched.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::rng::Xoshiro256StarStar;

#[derive(Debug, Clone, PartialEq)]
pub enum RouterError {
    InvalidConfig(String),
    NonFiniteScore {
        index: usize,
    },
    DimensionMismatch {
        expected: usize,
        got: usize,
    },
    EmptyDecisions,
    InvalidAlignment,
    /// An unselected routing-map entry carried a positive probability.
    InconsistentMap {
        token: usize,
        expert: usize,
    },
    /// Not enough zero-probability slots to pad the named expert.
    InsufficientPaddingSlots {
        expert: usize,
        needed: usize,
        available: usize,
    },
}

impl core::fmt::Display for RouterError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::InvalidConfig(reason) => write!(f, "invalid router config: {reason}"),
            Self::NonFiniteScore { index } => write!(f, "non-finite score at expert {index}"),
            Self::DimensionMismatch { expected, got } => {
                write!(f, "expected {expected} entries, got {got}")
            }
            Self::EmptyDecisions => write!(f, "no routing decisions supplied"),
            Self::InvalidAlignment => write!(f, "alignment must be >= 1"),
            Self::InconsistentMap { token, expert } => write!(
                f,
                "routing map entry ({token}, {expert}) is unselected but has positive probability"
            ),
            Self::InsufficientPaddingSlots {
                expert,
                needed,
                available,
            } => write!(
                f,
                "expert {expert} needs {needed} padding slots but only {available} are free"
            ),
        }
    }
}

impl core::error::Error for RouterError {}

/// Static routing configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterConfig {
    pub n_experts: usize,
    pub top_k: usize,
    pub n_groups: usize,
    pub top_groups: usize,
    /// Gate values are normalized to sum to this factor.
    pub gate_scale: f64,
    /// Bias update rate `u`.
    pub update_rate: f64,
    /// Expert-count alignment for the padding routing map.
    pub alignment: usize,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self {
            n_experts: 256,
            top_k: 8,
            n_groups: 8,
            top_groups: 4,
            gate_scale: 2.5,
            update_rate: 0.001,
            alignment: 16,
        }
    }
}

impl RouterConfig {
    pub fn validate(&self) -> Result<(), RouterError> {
        if self.n_experts == 0 || self.top_k == 0 || self.n_groups == 0 || self.top_groups == 0 {
            return Err(RouterError::InvalidConfig(String::from(
                "counts must be positive",
            )));
        }
        if !self.n_experts.is_multiple_of(self.n_groups) {
            return Err(RouterError::InvalidConfig(format!(
                "n_experts {} not divisible by n_groups {}",
                self.n_experts, self.n_groups
            )));
        }
        if self.top_groups > self.n_groups {
            return Err(RouterError::InvalidConfig(format!(
                "top_groups {} exceeds n_groups {}",
                self.top_groups, self.n_groups
            )));
        }
        let reachable = (self.n_experts / self.n_groups) * self.top_groups;
        if self.top_k > reachable {
            return Err(RouterError::InvalidConfig(format!(
                "top_k {} exceeds the {} experts reachable through {} groups",
                self.top_k, reachable, self.top_groups
            )));
        }
        if !(self.gate_scale > 0.0) {
            return Err(RouterError::InvalidConfig(String::from(
                "gate_scale must be positive",
            )));
        }
        if !(self.update_rate >= 0.0) {
            return Err(RouterError::InvalidConfig(String::from(
                "update_rate must be non-negative",
            )));
        }
        if self.alignment == 0 {
            return Err(RouterError::InvalidAlignment);
        }
        Ok(())
    }

    pub fn group_size(&self) -> usize {
        self.n_experts / self.n_groups
    }
}

/// Per-expert selection biases. The centered update conserves the sum.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasState {
    b: Vec<f64>,
}

impl BiasState {
    pub fn zeros(n_experts: usize) -> Self {
        Self {
            b: vec![0.0; n_experts],
        }
    }

    pub fn from_values(b: Vec<f64>) -> Self {
        Self { b }
    }

    pub fn values(&self) -> &[f64] {
        &self.b
    }

    pub fn len(&self) -> usize {
        self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.b.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.b.iter().sum()
    }
}

/// One token's routing outcome: the selected experts (selection order) and
/// their gate values, which sum to the configured gate scale.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingDecision {
    pub experts: Vec<usize>,
    pub gates: Vec<f64>,
}

/// Load accounting over a batch of routing decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadStats {
    counts: Vec<u64>,
    /// `count_i − mean(count)`: positive means overloaded.
    violations: Vec<f64>,
    mean_count: f64,
    max_violation_ratio: f64,
}

impl LoadStats {
    pub fn from_counts(counts: Vec<u64>) -> Result<Self, RouterError> {
        if counts.is_empty() {
            return Err(RouterError::EmptyDecisions);
        }
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(RouterError::EmptyDecisions);
        }
        let mean = total as f64 / counts.len() as f64;
        let violations: Vec<f64> = counts.iter().map(|&c| c as f64 - mean).collect();
        let max = counts.iter().copied().max().unwrap_or(0);
        Ok(Self {
            counts,
            violations,
            mean_count: mean,
            max_violation_ratio: max as f64 / mean,
        })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// `count_i − mean(count)` per expert.
    pub fn violations(&self) -> &[f64] {
        &self.violations
    }

    /// Balancing error `mean(count) − count_i` per expert; this is the `e_i`
    /// the bias update consumes (positive = starved, bias should rise).
    pub fn balance_error(&self, expert: usize) -> f64 {
        -self.violations[expert]
    }

    pub fn mean_count(&self) -> f64 {
        self.mean_count
    }

    pub fn max_count(&self) -> u64 {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    pub fn min_count(&self) -> u64 {
        self.counts.iter().copied().min().unwrap_or(0)
    }

    pub fn max_violation_ratio(&self) -> f64 {
        self.max_violation_ratio
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Routes one token: group-limited biased top-k selection with raw-score
/// gates. The bias shifts selection only; gate values are the normalized
/// sigmoids of the raw scores, scaled to sum to `cfg.gate_scale`. No token
/// is ever dropped.
pub fn route_topk(
    scores: &[f64],
    bias: &BiasState,
    cfg: &RouterConfig,
) -> Result<RoutingDecision, RouterError> {
    cfg.validate()?;
    if scores.len() != cfg.n_experts {
        return Err(RouterError::DimensionMismatch {
            expected: cfg.n_experts,
            got: scores.len(),
        });
    }
    if bias.len() != cfg.n_experts {
        return Err(RouterError::DimensionMismatch {
            expected: cfg.n_experts,
            got: bias.len(),
        });
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(RouterError::NonFiniteScore { index });
    }

    let group_size = cfg.group_size();
    let per_group = cfg.top_k.min(group_size);
    let biased: Vec<f64> = scores
        .iter()
        .zip(bias.values())
        .map(|(s, b)| s + b)
        .collect();

    // Group score = sum of the group's top-(k within group) biased scores.
    let mut group_scores = Vec::with_capacity(cfg.n_groups);
    let mut scratch = vec![0.0; group_size];
    for g in 0..cfg.n_groups {
        scratch.copy_from_slice(&biased[g * group_size..(g + 1) * group_size]);
        scratch.sort_unstable_by(|a, b| b.total_cmp(a));
        group_scores.push(scratch[..per_group].iter().sum::<f64>());
    }
    let mut group_order: Vec<usize> = (0..cfg.n_groups).collect();
    group_order
        .sort_unstable_by(|&a, &b| group_scores[b].total_cmp(&group_scores[a]).then(a.cmp(&b)));

    // Biased top-k among the experts of the selected groups.
    let mut candidates: Vec<usize> = Vec::with_capacity(cfg.top_groups * group_size);
    for &g in group_order.iter().take(cfg.top_groups) {
        candidates.extend(g * group_size..(g + 1) * group_size);
    }
    candidates.sort_unstable_by(|&a, &b| biased[b].total_cmp(&biased[a]).then(a.cmp(&b)));
    candidates.truncate(cfg.top_k);

    let raw_gates: Vec<f64> = candidates
        .iter()
        .map(|&e| math::sigmoid(scores[e]))
        .collect();
    let norm: f64 = raw_gates.iter().sum();
    let gates: Vec<f64> = raw_gates
        .iter()
        .map(|g| g / norm * cfg.gate_scale)
        .collect();

    Ok(RoutingDecision {
        experts: candidates,
        gates,
    })
}

/// Applies the centered sign update to the bias vector.
///
/// The balancing error is `e_i = mean load − load_i` (see
/// [`LoadStats::balance_error`]); `sign(0) = 0`. The centering term keeps
/// `Σ b_i` unchanged up to rounding.
pub fn update_bias(
    bias: &BiasState,
    stats: &LoadStats,
    update_rate: f64,
) -> Result<BiasState, RouterError> {
    if stats.counts().len() != bias.len() {
        return Err(RouterError::DimensionMismatch {
            expected: bias.len(),
            got: stats.counts().len(),
        });
    }
    let n = bias.len() as f64;
    let mean_sign: f64 = (0..bias.len())
        .map(|i| sign(stats.balance_error(i)))
        .sum::<f64>()
        / n;
    let b = bias
        .values()
        .iter()
        .enumerate()
        .map(|(i, &bi)| bi + update_rate * (sign(stats.balance_error(i)) - mean_sign))
        .collect();
    Ok(BiasState::from_values(b))
}

/// Tallies per-expert token counts and violation statistics over a batch.
pub fn load_stats(
    decisions: &[RoutingDecision],
    n_experts: usize,
) -> Result<LoadStats, RouterError> {
    if decisions.is_empty() {
        return Err(RouterError::EmptyDecisions);
    }
    let mut counts = vec![0u64; n_experts];
    for d in decisions {
        for &e in &d.experts {
            if e >= n_experts {
                return Err(RouterError::DimensionMismatch {
                    expected: n_experts,
                    got: e + 1,
                });
            }
            counts[e] += 1;
        }
    }
    LoadStats::from_counts(counts)
}

/// A token × expert assignment mask with routing probabilities. Unselected
/// entries must carry probability exactly zero; selected entries may carry
/// zero probability (padding slots).
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingMap {
    tokens: usize,
    experts: usize,
    selected: Vec<bool>,
    probs: Vec<f64>,
}

impl RoutingMap {
    pub fn new(
        tokens: usize,
        experts: usize,
        selected: Vec<bool>,
        probs: Vec<f64>,
    ) -> Result<Self, RouterError> {
        if selected.len() != tokens * experts || probs.len() != tokens * experts {
            return Err(RouterError::DimensionMismatch {
                expected: tokens * experts,
                got: selected.len().min(probs.len()),
            });
        }
        for t in 0..tokens {
            for e in 0..experts {
                let idx = t * experts + e;
                if !selected[idx] && probs[idx] != 0.0 {
                    return Err(RouterError::InconsistentMap {
                        token: t,
                        expert: e,
                    });
                }
            }
        }
        Ok(Self {
            tokens,
            experts,
            selected,
            probs,
        })
    }

    /// Builds the map from per-token decisions, storing gate values as the
    /// routing probabilities.
    pub fn from_decisions(
        decisions: &[RoutingDecision],
        n_experts: usize,
    ) -> Result<Self, RouterError> {
        if decisions.is_empty() {
            return Err(RouterError::EmptyDecisions);
        }
        let tokens = decisions.len();
        let mut selected = vec![false; tokens * n_experts];
        let mut probs = vec![0.0; tokens * n_experts];
        for (t, d) in decisions.iter().enumerate() {
            for (&e, &g) in d.experts.iter().zip(&d.gates) {
                selected[t * n_experts + e] = true;
                probs[t * n_experts + e] = g;
            }
        }
        Ok(Self {
            tokens,
            experts: n_experts,
            selected,
            probs,
        })
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn experts(&self) -> usize {
        self.experts
    }

    pub fn is_selected(&self, token: usize, expert: usize) -> bool {
        self.selected[token * self.experts + expert]
    }

    pub fn prob(&self, token: usize, expert: usize) -> f64 {
        self.probs[token * self.experts + expert]
    }

    /// Number of tokens assigned to each expert.
    pub fn expert_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.experts];
        for t in 0..self.tokens {
            for (e, count) in counts.iter_mut().enumerate() {
                if self.selected[t * self.experts + e] {
                    *count += 1;
                }
            }
        }
        counts
    }

    /// The set of (token, expert) routes with positive probability.
    pub fn positive_routes(&self) -> Vec<(usize, usize)> {
        let mut routes = Vec::new();
        for t in 0..self.tokens {
            for e in 0..self.experts {
                if self.probs[t * self.experts + e] > 0.0 {
                    routes.push((t, e));
                }
            }
        }
        routes
    }
}

/// Pads every expert's token count up to a multiple of `alignment` by
/// enabling additional entries in the zero-probability region. Originally
/// selected entries and all probabilities are left untouched, so the routed
/// computation is unchanged.
pub fn pad_routing_map(map: &RoutingMap, alignment: usize) -> Result<RoutingMap, RouterError> {
    if alignment == 0 {
        return Err(RouterError::InvalidAlignment);
    }
    let mut out = map.clone();
    if alignment == 1 {
        return Ok(out);
    }
    let counts = map.expert_counts();
    for (expert, &count) in counts.iter().enumerate() {
        let deficit = (alignment - count % alignment) % alignment;
        if deficit == 0 {
            continue;
        }
        let mut remaining = deficit;
        for token in 0..map.tokens {
            if remaining == 0 {
                break;
            }
            let idx = token * map.experts + expert;
            if !out.selected[idx] {
                out.selected[idx] = true; // probability stays exactly zero
                remaining -= 1;
            }
        }
        if remaining > 0 {
            return Err(RouterError::InsufficientPaddingSlots {
                expert,
                needed: deficit,
                available: deficit - remaining,
            });
        }
    }
    Ok(out)
}

/// Runs the balance loop: per step, every token's scores are standard
/// Gaussians, with a fixed offset of magnitude `skew` on the first expert
/// (one persistently hot expert). Tokens are routed with the current bias
/// and the bias is updated once from that step's load. Returns the per-step
/// statistics (taken before each update). Deterministic for a fixed seed.
pub fn simulate_balance(
    cfg: &RouterConfig,
    steps: usize,
    tokens_per_step: usize,
    skew: f64,
    seed: u64,
) -> Result<Vec<LoadStats>, RouterError> {
    cfg.validate()?;
    if steps == 0 || tokens_per_step == 0 {
        return Err(RouterError::InvalidConfig(String::from(
            "steps and tokens_per_step must be >= 1",
        )));
    }
    let n = cfg.n_experts;
    let mut offsets = vec![0.0; n];
    offsets[0] = skew;

    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let mut bias = BiasState::zeros(n);
    let mut series = Vec::with_capacity(steps);
    let mut scores = vec![0.0; n];

    for _ in 0..steps {
        let mut counts = vec![0u64; n];
        for _ in 0..tokens_per_step {
            for (s, &o) in scores.iter_mut().zip(&offsets) {
                *s = rng.next_gaussian() + o;
            }
            let decision = route_topk(&scores, &bias, cfg)?;
            for &e in &decision.experts {
                counts[e] += 1;
            }
        }
        let stats = LoadStats::from_counts(counts)?;
        bias = update_bias(&bias, &stats, cfg.update_rate)?;
        series.push(stats);
    }
    Ok(series)
}
