//! Scaling-law fitting and evaluation.
//!
//! Three families of laws are covered:
//!
//! 1. **Optimal-hyperparameter laws** — learning rate and batch size as
//!    power laws of the total compute budget `C` (FLOPs).
//! 2. **Model–data allocation laws** — FLOPs per token `M(C)` and training
//!    tokens `D(C)` under the constraint `C = M · D`.
//! 3. **The unified efficiency-leverage law** — the compute multiplier a
//!    dense model needs to match a sparse MoE configuration:
//!
//!    ```text
//!    EL(A, G, C) = Â^(α + γ·(ln G)² + β·ln G),   α = a + d·ln C
//!    Â(A) = (S + 1) / (S·A + 1)
//!    ```
//!
//!    `A` is the activation ratio, `G` the number of activated experts, and
//!    `Â` a saturating transform of `A` with `Â(1) = 1`, so a dense model
//!    (A = 1) has leverage exactly 1 whatever the parameters.
//!
//! All fits minimize a Huber loss over log-space residuals with BFGS from a
//! deterministic multi-start grid seeded at the ordinary-least-squares
//! solution. Natural logarithms throughout.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::optim::{minimize_multi_start, BfgsOptions, BfgsResult};

/// Huber threshold applied to log-space residuals.
pub const DEFAULT_HUBER_DELTA: f64 = 1e-3;

/// Default saturation constant `S` of the activation-ratio transform.
pub const DEFAULT_SATURATION: f64 = 255.0;

/// Errors from the fitting and prediction routines.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalingError {
    /// A residual or input value was NaN/infinite.
    NonFinite(String),
    /// The Huber threshold must be positive.
    NonPositiveDelta,
    /// Too few points for the requested fit.
    TooFewPoints { needed: usize, got: usize },
    /// A compute or observed value that must be positive was not.
    NonPositive { what: &'static str, index: usize },
    /// Activation ratio outside (0, 1].
    InvalidActivationRatio(f64),
    /// Granularity below 1.
    InvalidGranularity(f64),
    /// The fit inputs do not span two distinct values in some dimension.
    DegenerateSpan(&'static str),
    /// Compute budget must be positive.
    NonPositiveCompute,
    /// The optimizer exhausted its iterations; carries the best fit seen.
    PowerLawNotConverged(PowerLawFit),
    /// Same for the efficiency-leverage fit.
    ElLawNotConverged { params: ElLawParams, residual: f64 },
    /// The allocation law cannot be inverted (exponent ≤ 0).
    NonInvertibleAllocation { exponent: f64 },
    /// Wind-tunnel plan needs at least two models and an increasing range.
    InvalidPlanRange,
}

impl core::fmt::Display for ScalingError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::NonFinite(what) => write!(f, "non-finite input: {what}"),
            Self::NonPositiveDelta => write!(f, "huber delta must be > 0"),
            Self::TooFewPoints { needed, got } => {
                write!(f, "need at least {needed} points, got {got}")
            }
            Self::NonPositive { what, index } => {
                write!(f, "{what} at index {index} must be > 0")
            }
            Self::InvalidActivationRatio(a) => {
                write!(f, "activation ratio {a} outside (0, 1]")
            }
            Self::InvalidGranularity(g) => write!(f, "granularity {g} below 1"),
            Self::DegenerateSpan(dim) => {
                write!(f, "inputs span fewer than 2 distinct values of {dim}")
            }
            Self::NonPositiveCompute => write!(f, "compute budget must be > 0"),
            Self::PowerLawNotConverged(fit) => write!(
                f,
                "power-law fit did not converge (best: coefficient {}, exponent {})",
                fit.coefficient, fit.exponent
            ),
            Self::ElLawNotConverged { residual, .. } => {
                write!(f, "EL-law fit did not converge (best residual {residual})")
            }
            Self::NonInvertibleAllocation { exponent } => {
                write!(
                    f,
                    "allocation law with exponent {exponent} is not invertible"
                )
            }
            Self::InvalidPlanRange => {
                write!(f, "wind-tunnel plan needs n >= 2 models and 0 < min < max")
            }
        }
    }
}

impl core::error::Error for ScalingError {}

/// A fitted power law `y(C) = coefficient · C^exponent`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub coefficient: f64,
    pub exponent: f64,
    /// Final Huber objective value at the fitted parameters.
    pub residual: f64,
}

impl PowerLawFit {
    pub fn evaluate(&self, compute: f64) -> f64 {
        self.coefficient * math::powf(compute, self.exponent)
    }
}

/// One architecture observation for the efficiency-leverage fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchPoint {
    /// Total training compute in FLOPs.
    pub compute: f64,
    /// Fraction of parameters active per token, in (0, 1].
    pub activation_ratio: f64,
    /// Number of activated experts.
    pub granularity: f64,
    /// Measured value (efficiency leverage for fits, loss for filters).
    pub observed: f64,
}

/// Parameters of the unified efficiency-leverage law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElLawParams {
    /// Baseline scaling exponent.
    pub a: f64,
    /// Compute amplification: the exponent grows by `d` per e-fold of compute.
    pub d: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Saturation constant `S` of the activation-ratio transform.
    pub saturation: f64,
}

/// Result of [`fit_el_law`]: the parameters plus the final objective value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElFitResult {
    pub params: ElLawParams,
    pub residual: f64,
}

/// One wind-tunnel experiment: a model size with its compute-optimal budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindTunnelEntry {
    pub flops_per_token: f64,
    pub train_tokens: u64,
    pub learning_rate: f64,
    pub batch_size: u64,
    pub total_compute: f64,
}

/// A ladder of wind-tunnel experiments, ascending in model size.
#[derive(Debug, Clone, PartialEq)]
pub struct WindTunnelPlan {
    pub entries: Vec<WindTunnelEntry>,
}

/// Prediction of the compute-optimal model/data split at one budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationPrediction {
    pub flops_per_token: f64,
    pub tokens: f64,
    /// True when the token count was rescaled to restore `M · D = C`.
    pub adjusted: bool,
}

/// Huber loss of a single residual: `½r²` inside `|r| ≤ δ`, linear outside.
pub fn huber_loss(residual: f64, delta: f64) -> Result<f64, ScalingError> {
    if !residual.is_finite() {
        return Err(ScalingError::NonFinite(format!("residual {residual}")));
    }
    if !(delta > 0.0) {
        return Err(ScalingError::NonPositiveDelta);
    }
    let r = math::abs(residual);
    Ok(if r <= delta {
        0.5 * r * r
    } else {
        delta * (r - 0.5 * delta)
    })
}

fn validate_points(points: &[(f64, f64)]) -> Result<(), ScalingError> {
    if points.len() < 2 {
        return Err(ScalingError::TooFewPoints {
            needed: 2,
            got: points.len(),
        });
    }
    for (i, &(c, y)) in points.iter().enumerate() {
        if !c.is_finite() || !y.is_finite() {
            return Err(ScalingError::NonFinite(format!("point {i}")));
        }
        if c <= 0.0 {
            return Err(ScalingError::NonPositive {
                what: "compute",
                index: i,
            });
        }
        if y <= 0.0 {
            return Err(ScalingError::NonPositive {
                what: "value",
                index: i,
            });
        }
    }
    Ok(())
}

/// Ordinary least squares for `ln y = b + e·ln C`; returns `(b, e)`.
fn log_ols(logs: &[(f64, f64)]) -> (f64, f64) {
    let n = logs.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in logs {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let denom = n * sxx - sx * sx;
    if math::abs(denom) < 1e-30 {
        // All computes identical; fall back to a flat law.
        (sy / n, 0.0)
    } else {
        let slope = (n * sxy - sx * sy) / denom;
        let intercept = (sy - slope * sx) / n;
        (intercept, slope)
    }
}

/// Fits `y = coefficient · C^exponent` to `(compute, value)` pairs by
/// minimizing the Huber loss of log-space residuals with multi-start BFGS.
pub fn fit_power_law(points: &[(f64, f64)], delta: f64) -> Result<PowerLawFit, ScalingError> {
    validate_points(points)?;
    if !(delta > 0.0) {
        return Err(ScalingError::NonPositiveDelta);
    }

    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|&(c, y)| (math::ln(c), math::ln(y)))
        .collect();

    let objective = |p: &[f64]| -> f64 {
        let (b, e) = (p[0], p[1]);
        let mut total = 0.0;
        for &(x, y) in &logs {
            let r = y - (b + e * x);
            let ar = math::abs(r);
            total += if ar <= delta {
                0.5 * r * r
            } else {
                delta * (ar - 0.5 * delta)
            };
        }
        total
    };

    let (b0, e0) = log_ols(&logs);
    let offsets = [-2.0, 0.0, 2.0];
    let mut starts = Vec::with_capacity(9);
    for &db in &offsets {
        for &de in &offsets {
            starts.push(vec![b0 + db, e0 + de]);
        }
    }

    let best: BfgsResult =
        minimize_multi_start(objective, &starts, &BfgsOptions::default()).expect("starts nonempty");
    let fit = PowerLawFit {
        coefficient: math::exp(best.x[0]),
        exponent: best.x[1],
        residual: best.value,
    };
    if best.converged {
        Ok(fit)
    } else {
        Err(ScalingError::PowerLawNotConverged(fit))
    }
}

/// Keeps, per compute budget, the points whose loss is within `rel_tol` of
/// the minimum loss at that budget (the "near-optimal" filter). Points with
/// exactly equal compute values form one budget group.
pub fn filter_near_optimal(points: &[(f64, f64)], rel_tol: f64) -> Vec<(f64, f64)> {
    use alloc::collections::BTreeMap;
    let mut min_at: BTreeMap<u64, f64> = BTreeMap::new();
    for &(c, y) in points {
        let key = c.to_bits();
        min_at.entry(key).and_modify(|m| *m = m.min(y)).or_insert(y);
    }
    points
        .iter()
        .copied()
        .filter(|&(c, y)| y <= min_at[&c.to_bits()] * (1.0 + rel_tol))
        .collect()
}

/// Evaluates the hyperparameter laws at `compute`; the batch size is rounded
/// up to the nearest positive integer.
pub fn predict_hparams(
    lr_fit: &PowerLawFit,
    bs_fit: &PowerLawFit,
    compute: f64,
) -> Result<(f64, u64), ScalingError> {
    if !(compute > 0.0) || !compute.is_finite() {
        return Err(ScalingError::NonPositiveCompute);
    }
    let lr = lr_fit.evaluate(compute);
    let bs_raw = bs_fit.evaluate(compute);
    let bs = ceil_to_count(bs_raw);
    Ok((lr, bs))
}

fn ceil_to_count(x: f64) -> u64 {
    let f = math::floor(x);
    let up = if f == x { f } else { f + 1.0 };
    if up < 1.0 {
        1
    } else {
        up as u64
    }
}

/// Evaluates the model–data allocation pair at `compute`. If the product
/// `M(C) · D(C)` deviates from `C` by more than 1% relative, the token count
/// is rescaled so the identity holds and the adjustment is flagged.
pub fn predict_allocation(
    m_fit: &PowerLawFit,
    d_fit: &PowerLawFit,
    compute: f64,
) -> Result<AllocationPrediction, ScalingError> {
    if !(compute > 0.0) || !compute.is_finite() {
        return Err(ScalingError::NonPositiveCompute);
    }
    let m = m_fit.evaluate(compute);
    let mut d = d_fit.evaluate(compute);
    let mut adjusted = false;
    if math::abs(m * d - compute) > 0.01 * compute {
        d = compute / m;
        adjusted = true;
    }
    Ok(AllocationPrediction {
        flops_per_token: m,
        tokens: d,
        adjusted,
    })
}

fn a_hat(activation_ratio: f64, saturation: f64) -> f64 {
    (saturation + 1.0) / (saturation * activation_ratio + 1.0)
}

/// Evaluates the efficiency-leverage law at one architecture point.
pub fn el_predict(params: &ElLawParams, arch: &ArchPoint) -> Result<f64, ScalingError> {
    if !(arch.activation_ratio > 0.0 && arch.activation_ratio <= 1.0) {
        return Err(ScalingError::InvalidActivationRatio(arch.activation_ratio));
    }
    if !(arch.granularity >= 1.0) {
        return Err(ScalingError::InvalidGranularity(arch.granularity));
    }
    if !(arch.compute > 0.0) {
        return Err(ScalingError::NonPositiveCompute);
    }
    if arch.activation_ratio == 1.0 {
        // Â(1) = 1 exactly; avoid powf rounding in the dense baseline.
        return Ok(1.0);
    }
    let alpha = params.a + params.d * math::ln(arch.compute);
    let log_g = math::ln(arch.granularity);
    let exponent = alpha + params.gamma * log_g * log_g + params.beta * log_g;
    Ok(math::powf(
        a_hat(arch.activation_ratio, params.saturation),
        exponent,
    ))
}

/// Huber objective of the EL law on `points` (log-space residuals).
pub fn el_objective(
    params: &ElLawParams,
    points: &[ArchPoint],
    delta: f64,
) -> Result<f64, ScalingError> {
    if !(delta > 0.0) {
        return Err(ScalingError::NonPositiveDelta);
    }
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        if !(p.observed > 0.0) {
            return Err(ScalingError::NonPositive {
                what: "observed EL",
                index: i,
            });
        }
        let predicted = el_predict(params, p)?;
        total += huber_loss(math::ln(p.observed) - math::ln(predicted), delta)?;
    }
    Ok(total)
}

fn distinct_count(values: impl Iterator<Item = f64>) -> usize {
    let mut seen: Vec<u64> = values.map(|v| v.to_bits()).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Solves a small symmetric linear system `A x = b` in place by Gaussian
/// elimination with partial pivoting. Returns `None` for a singular system.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Option<Vec<f64>> {
    for col in 0..n {
        let mut pivot = col;
        for row in (col + 1)..n {
            if math::abs(a[row * n + col]) > math::abs(a[pivot * n + col]) {
                pivot = row;
            }
        }
        if math::abs(a[pivot * n + col]) < 1e-30 {
            return None;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in (col + 1)..n {
            let factor = a[row * n + col] / diag;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in (col + 1)..n {
            acc -= a[col * n + k] * x[k];
        }
        x[col] = acc / a[col * n + col];
    }
    Some(x)
}

/// Fits the efficiency-leverage law to measured `(A, G, C, EL)` points with
/// the saturation constant held fixed. Multi-start BFGS around the
/// least-squares seed (the law is linear in its parameters in log space).
pub fn fit_el_law(
    points: &[ArchPoint],
    delta: f64,
    saturation: f64,
) -> Result<ElFitResult, ScalingError> {
    if points.len() < 5 {
        return Err(ScalingError::TooFewPoints {
            needed: 5,
            got: points.len(),
        });
    }
    if !(delta > 0.0) {
        return Err(ScalingError::NonPositiveDelta);
    }
    if !(saturation > 0.0) {
        return Err(ScalingError::NonPositive {
            what: "saturation",
            index: 0,
        });
    }
    for (i, p) in points.iter().enumerate() {
        if !(p.activation_ratio > 0.0 && p.activation_ratio <= 1.0) {
            return Err(ScalingError::InvalidActivationRatio(p.activation_ratio));
        }
        if !(p.granularity >= 1.0) {
            return Err(ScalingError::InvalidGranularity(p.granularity));
        }
        if !(p.compute > 0.0) {
            return Err(ScalingError::NonPositiveCompute);
        }
        if !(p.observed > 0.0) || !p.observed.is_finite() {
            return Err(ScalingError::NonPositive {
                what: "observed EL",
                index: i,
            });
        }
    }
    if distinct_count(points.iter().map(|p| p.activation_ratio)) < 2 {
        return Err(ScalingError::DegenerateSpan("activation_ratio"));
    }
    if distinct_count(points.iter().map(|p| p.granularity)) < 2 {
        return Err(ScalingError::DegenerateSpan("granularity"));
    }
    if distinct_count(points.iter().map(|p| p.compute)) < 2 {
        return Err(ScalingError::DegenerateSpan("compute"));
    }

    // ln EL = a·u + d·(u ln C) + β·(u ln G) + γ·(u (ln G)²), u = ln Â.
    let rows: Vec<([f64; 4], f64)> = points
        .iter()
        .map(|p| {
            let u = math::ln(a_hat(p.activation_ratio, saturation));
            let lc = math::ln(p.compute);
            let lg = math::ln(p.granularity);
            ([u, u * lc, u * lg, u * lg * lg], math::ln(p.observed))
        })
        .collect();

    let objective = |p: &[f64]| -> f64 {
        let mut total = 0.0;
        for (feat, target) in &rows {
            let pred = p[0] * feat[0] + p[1] * feat[1] + p[2] * feat[2] + p[3] * feat[3];
            let r = target - pred;
            let ar = math::abs(r);
            total += if ar <= delta {
                0.5 * r * r
            } else {
                delta * (ar - 0.5 * delta)
            };
        }
        total
    };

    // Least-squares seed via the 4x4 normal equations.
    let mut ata = vec![0.0; 16];
    let mut atb = vec![0.0; 4];
    for (feat, target) in &rows {
        for i in 0..4 {
            atb[i] += feat[i] * target;
            for j in 0..4 {
                ata[i * 4 + j] += feat[i] * feat[j];
            }
        }
    }
    let seed = solve_dense(&mut ata, &mut atb, 4).unwrap_or_else(|| vec![0.0; 4]);

    let offsets = [-0.5, 0.0, 0.5];
    let mut starts = Vec::with_capacity(81);
    for &o0 in &offsets {
        for &o1 in &offsets {
            for &o2 in &offsets {
                for &o3 in &offsets {
                    starts.push(vec![seed[0] + o0, seed[1] + o1, seed[2] + o2, seed[3] + o3]);
                }
            }
        }
    }

    let best =
        minimize_multi_start(objective, &starts, &BfgsOptions::default()).expect("starts nonempty");
    let params = ElLawParams {
        a: best.x[0],
        d: best.x[1],
        beta: best.x[2],
        gamma: best.x[3],
        saturation,
    };
    let result = ElFitResult {
        params,
        residual: best.value,
    };
    if best.converged {
        Ok(result)
    } else {
        Err(ScalingError::ElLawNotConverged {
            params,
            residual: best.value,
        })
    }
}

/// Inverts `M(C) = size` by bisection in log-compute space.
fn invert_allocation(m_fit: &PowerLawFit, size: f64) -> Result<f64, ScalingError> {
    if m_fit.exponent <= 0.0 {
        return Err(ScalingError::NonInvertibleAllocation {
            exponent: m_fit.exponent,
        });
    }
    let (mut lo, mut hi) = (-700.0_f64, 700.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if m_fit.evaluate(math::exp(mid)) < size {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    Ok(math::exp(0.5 * (lo + hi)))
}

/// Plans a geometric ladder of wind-tunnel experiments: `n_models` sizes
/// spaced geometrically over `[min_flops_per_token, max_flops_per_token]`,
/// each with the compute budget solved from the allocation law, tokens from
/// the `C = M · D` identity, and hyperparameters from their laws.
#[allow(clippy::too_many_arguments)]
pub fn plan_wind_tunnel(
    min_flops_per_token: f64,
    max_flops_per_token: f64,
    n_models: usize,
    lr_fit: &PowerLawFit,
    bs_fit: &PowerLawFit,
    m_fit: &PowerLawFit,
    d_fit: &PowerLawFit,
) -> Result<WindTunnelPlan, ScalingError> {
    if n_models < 2 || !(min_flops_per_token > 0.0) || min_flops_per_token >= max_flops_per_token {
        return Err(ScalingError::InvalidPlanRange);
    }
    if m_fit.exponent <= 0.0 {
        return Err(ScalingError::NonInvertibleAllocation {
            exponent: m_fit.exponent,
        });
    }
    if d_fit.exponent <= 0.0 {
        return Err(ScalingError::NonInvertibleAllocation {
            exponent: d_fit.exponent,
        });
    }

    let ln_min = math::ln(min_flops_per_token);
    let ln_max = math::ln(max_flops_per_token);
    let mut entries = Vec::with_capacity(n_models);
    for i in 0..n_models {
        let t = i as f64 / (n_models - 1) as f64;
        let size = math::exp(ln_min + t * (ln_max - ln_min));
        let compute = invert_allocation(m_fit, size)?;
        let tokens = math::round(compute / size).max(1.0);
        let (learning_rate, batch_size) = predict_hparams(lr_fit, bs_fit, compute)?;
        entries.push(WindTunnelEntry {
            flops_per_token: size,
            train_tokens: tokens as u64,
            learning_rate,
            batch_size,
            // Recomputed as the exact product so the identity holds bit-wise.
            total_compute: size * tokens,
        });
    }
    Ok(WindTunnelPlan { entries })
}
