//! Software FP8 E4M3 codec, block quantizer, and precision audit.
//!
//! The 8-bit format is 1 sign, 4 exponent (bias 7), 3 mantissa bits with no
//! infinities: the all-ones exponent reuses mantissa 0..6 as normal values,
//! leaving one NaN pattern per sign. Largest finite magnitude is
//! `1.75 · 2^8 = 448`; the smallest subnormal is `2^-9`. Encoding rounds to
//! nearest-even and saturates past ±448.
//!
//! Quantization is block-wise: activations and gradients in `[1, 128]`
//! blocks, weights in `[128, 128]` blocks. Each block stores an f32 scale
//! `amax/448` (1 for all-zero blocks) and the codes of `x / scale`.
//!
//! The audit reports two health metrics per tensor:
//!
//! - **underflow rate** — fraction of elements that were nonzero before
//!   quantization and decode to zero after;
//! - **distortion** — cosine similarity between the original and the
//!   reconstructed (quantized then dequantized) tensor.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Largest finite E4M3 magnitude.
pub const MAX_FINITE: f64 = 448.0;

/// Smallest positive E4M3 subnormal, `2^-9`.
pub const MIN_SUBNORMAL: f64 = 1.0 / 512.0;

/// Canonical NaN code (positive sign).
pub const NAN_CODE: u8 = 0x7F;

#[derive(Debug, Clone, PartialEq)]
pub enum Fp8Error {
    /// A tensor entry was NaN or infinite; carries its coordinates.
    NonFiniteEntry {
        row: usize,
        col: usize,
    },
    /// Shape does not match between original and quantized tensors.
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// Data length does not match rows × cols.
    BadDimensions {
        rows: usize,
        cols: usize,
        len: usize,
    },
    /// Transpose is only defined for the square-block weight layout.
    TransposeNeedsWeightLayout,
    InvalidLayoutTag(u8),
}

impl core::fmt::Display for Fp8Error {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::NonFiniteEntry { row, col } => {
                write!(f, "non-finite tensor entry at ({row}, {col})")
            }
            Self::ShapeMismatch { expected, got } => write!(
                f,
                "shape mismatch: expected {}x{}, got {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            Self::BadDimensions { rows, cols, len } => {
                write!(f, "{rows}x{cols} tensor cannot hold {len} elements")
            }
            Self::TransposeNeedsWeightLayout => {
                write!(
                    f,
                    "quantized transpose requires the [128,128] weight layout"
                )
            }
            Self::InvalidLayoutTag(tag) => write!(f, "unknown layout tag {tag}"),
        }
    }
}

impl core::error::Error for Fp8Error {}

/// Block layout of a quantized tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockLayout {
    /// Activation/gradient blocks of `[1, 128]` elements.
    ActGrad,
    /// Weight blocks of `[128, 128]` elements.
    Weight,
}

impl BlockLayout {
    pub fn tag(self) -> u8 {
        match self {
            Self::ActGrad => 0,
            Self::Weight => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self, Fp8Error> {
        match tag {
            0 => Ok(Self::ActGrad),
            1 => Ok(Self::Weight),
            other => Err(Fp8Error::InvalidLayoutTag(other)),
        }
    }

    fn block_shape(self) -> (usize, usize) {
        match self {
            Self::ActGrad => (1, 128),
            Self::Weight => (128, 128),
        }
    }
}

/// Dense row-major f64 matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, Fp8Error> {
        if data.len() != rows * cols {
            return Err(Fp8Error::BadDimensions {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn transpose(&self) -> Matrix {
        let mut data = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Matrix {
            rows: self.cols,
            cols: self.rows,
            data,
        }
    }
}

/// Encodes a finite or NaN f64 to the nearest E4M3 code.
///
/// Round-to-nearest-even on the representable grid; magnitudes above 448
/// saturate to ±448; NaN maps to the canonical NaN pattern.
pub fn e4m3_encode(x: f64) -> u8 {
    if x.is_nan() {
        return NAN_CODE;
    }
    let sign = if x.is_sign_negative() { 0x80u8 } else { 0 };
    let mag = math::abs(x);
    if mag > MAX_FINITE {
        return sign | 0x7E; // saturate to ±448
    }
    if mag < 0.015625 {
        // Subnormal band: below the smallest normal 2^-6 the representable
        // values are m · 2^-9 for m in 0..=7; round the integer mantissa.
        let m = math::round_ties_even(mag * 512.0) as u8; // exact: power-of-2 scale
        if m == 0 {
            return sign; // ±0
        }
        if m < 8 {
            return sign | m;
        }
        // Rounded up into the smallest normal, 2^-6.
        return sign | 0x08;
    }
    // Normal range: find the binade, then round the 3-bit mantissa.
    let mut exp = 0i32; // unbiased exponent of the binade
    let mut lower = 1.0f64; // 2^exp
    while mag >= lower * 2.0 {
        lower *= 2.0;
        exp += 1;
    }
    while mag < lower {
        lower *= 0.5;
        exp -= 1;
    }
    // mag in [2^exp, 2^(exp+1)); mantissa steps of 2^(exp-3).
    let step = lower / 8.0;
    let q = math::round_ties_even(mag / step); // in [8, 16]
    let (exp, q) = if q >= 16.0 { (exp + 1, 8.0) } else { (exp, q) };
    if exp > 8 {
        return sign | 0x7E; // rounded past the top binade: saturate
    }
    let biased = (exp + 7) as u8;
    let mantissa = (q as u8) & 0x07;
    sign | (biased << 3) | mantissa
}

/// Decodes an E4M3 code to its exact f64 value. Both NaN patterns decode to
/// NaN; there are no infinities.
pub fn e4m3_decode(code: u8) -> f64 {
    let sign = if code & 0x80 != 0 { -1.0 } else { 1.0 };
    let exp = (code >> 3) & 0x0F;
    let mantissa = (code & 0x07) as f64;
    if exp == 0x0F && (code & 0x07) == 0x07 {
        return f64::NAN;
    }
    if exp == 0 {
        // Subnormal: m · 2^-9 (i.e. (m/8) · 2^-6).
        sign * mantissa * MIN_SUBNORMAL
    } else {
        let scale = math::powi(2.0, exp as i32 - 7);
        sign * (1.0 + mantissa / 8.0) * scale
    }
}

/// A block-quantized tensor: E4M3 codes plus one f32-precision scale per
/// block. All-zero blocks store scale 1.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantTensor {
    pub rows: usize,
    pub cols: usize,
    pub layout: BlockLayout,
    /// Row-major E4M3 codes, one per element.
    pub codes: Vec<u8>,
    /// Block-grid-row-major scales.
    pub scales: Vec<f64>,
}

impl QuantTensor {
    fn grid(&self) -> (usize, usize) {
        let (bh, bw) = self.layout.block_shape();
        (self.rows.div_ceil(bh), self.cols.div_ceil(bw))
    }

    /// Scale of the block containing element (row, col).
    pub fn scale_at(&self, row: usize, col: usize) -> f64 {
        let (bh, bw) = self.layout.block_shape();
        let (_, grid_cols) = self.grid();
        self.scales[(row / bh) * grid_cols + (col / bw)]
    }

    /// True if any code is a NaN pattern.
    pub fn has_nan(&self) -> bool {
        self.codes.iter().any(|&c| (c & 0x7F) == 0x7F)
    }
}

/// Quantizes a matrix block-wise: per block, scale = amax/448 (rounded to
/// f32 precision, 1 for all-zero blocks) and codes of `x / scale`.
pub fn quantize(tensor: &Matrix, layout: BlockLayout) -> Result<QuantTensor, Fp8Error> {
    for r in 0..tensor.rows {
        for c in 0..tensor.cols {
            if !tensor.get(r, c).is_finite() {
                return Err(Fp8Error::NonFiniteEntry { row: r, col: c });
            }
        }
    }
    let (bh, bw) = layout.block_shape();
    let grid_rows = tensor.rows.div_ceil(bh);
    let grid_cols = tensor.cols.div_ceil(bw);
    let mut scales = vec![1.0f64; grid_rows * grid_cols];
    let mut codes = vec![0u8; tensor.rows * tensor.cols];

    for gr in 0..grid_rows {
        for gc in 0..grid_cols {
            let r0 = gr * bh;
            let c0 = gc * bw;
            let r1 = (r0 + bh).min(tensor.rows);
            let c1 = (c0 + bw).min(tensor.cols);
            let mut amax = 0.0f64;
            for r in r0..r1 {
                for c in c0..c1 {
                    amax = amax.max(math::abs(tensor.get(r, c)));
                }
            }
            let scale = if amax == 0.0 {
                1.0
            } else {
                // Stored and applied at f32 precision, like the real kernels.
                (amax / MAX_FINITE) as f32 as f64
            };
            scales[gr * grid_cols + gc] = scale;
            for r in r0..r1 {
                for c in c0..c1 {
                    codes[r * tensor.cols + c] = e4m3_encode(tensor.get(r, c) / scale);
                }
            }
        }
    }
    Ok(QuantTensor {
        rows: tensor.rows,
        cols: tensor.cols,
        layout,
        codes,
        scales,
    })
}

/// Reconstructs the f64 matrix: `decode(code) · block scale` element-wise.
/// NaN codes propagate as NaN entries.
pub fn dequantize(q: &QuantTensor) -> Matrix {
    let mut data = vec![0.0; q.rows * q.cols];
    let (bh, bw) = q.layout.block_shape();
    let (_, grid_cols) = q.grid();
    for r in 0..q.rows {
        for c in 0..q.cols {
            let scale = q.scales[(r / bh) * grid_cols + (c / bw)];
            data[r * q.cols + c] = e4m3_decode(q.codes[r * q.cols + c]) * scale;
        }
    }
    Matrix {
        rows: q.rows,
        cols: q.cols,
        data,
    }
}

/// Fraction of elements that were nonzero in `original` and decode to zero
/// in the reconstruction. Denominator is the total element count.
pub fn underflow_rate(original: &Matrix, q: &QuantTensor) -> Result<f64, Fp8Error> {
    if original.rows != q.rows || original.cols != q.cols {
        return Err(Fp8Error::ShapeMismatch {
            expected: (original.rows, original.cols),
            got: (q.rows, q.cols),
        });
    }
    let reconstructed = dequantize(q);
    let mut zeroed = 0usize;
    for (orig, rec) in original.data.iter().zip(&reconstructed.data) {
        if *orig != 0.0 && *rec == 0.0 {
            zeroed += 1;
        }
    }
    Ok(zeroed as f64 / original.data.len() as f64)
}

/// Variant of [`underflow_rate`] with only the nonzero originals in the
/// denominator. Returns 0 for an all-zero tensor.
pub fn underflow_rate_nonzero(original: &Matrix, q: &QuantTensor) -> Result<f64, Fp8Error> {
    if original.rows != q.rows || original.cols != q.cols {
        return Err(Fp8Error::ShapeMismatch {
            expected: (original.rows, original.cols),
            got: (q.rows, q.cols),
        });
    }
    let reconstructed = dequantize(q);
    let mut zeroed = 0usize;
    let mut nonzero = 0usize;
    for (orig, rec) in original.data.iter().zip(&reconstructed.data) {
        if *orig != 0.0 {
            nonzero += 1;
            if *rec == 0.0 {
                zeroed += 1;
            }
        }
    }
    if nonzero == 0 {
        Ok(0.0)
    } else {
        Ok(zeroed as f64 / nonzero as f64)
    }
}

fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 && nb == 0.0 {
        1.0
    } else if na == 0.0 || nb == 0.0 {
        0.0
    } else if dot * dot == na * nb {
        // Exactly (anti)parallel — typically a bit-exact reconstruction.
        // Short-circuit so the sqrt rounding cannot shave the ±1 result.
        if dot > 0.0 {
            1.0
        } else {
            -1.0
        }
    } else {
        dot / (math::sqrt(na) * math::sqrt(nb))
    }
}

/// Cosine similarity between the original and its reconstruction, flattened.
/// 1.0 when both are all-zero; 0.0 when exactly one is.
pub fn distortion(original: &Matrix, q: &QuantTensor) -> Result<f64, Fp8Error> {
    if original.rows != q.rows || original.cols != q.cols {
        return Err(Fp8Error::ShapeMismatch {
            expected: (original.rows, original.cols),
            got: (q.rows, q.cols),
        });
    }
    let reconstructed = dequantize(q);
    Ok(cosine_similarity(&original.data, &reconstructed.data))
}

/// Per-block-averaged distortion; exposed as an alternative view of the same
/// signal (the per-tensor number is the reporting default).
pub fn distortion_per_block(original: &Matrix, q: &QuantTensor) -> Result<f64, Fp8Error> {
    if original.rows != q.rows || original.cols != q.cols {
        return Err(Fp8Error::ShapeMismatch {
            expected: (original.rows, original.cols),
            got: (q.rows, q.cols),
        });
    }
    let reconstructed = dequantize(q);
    let (bh, bw) = q.layout.block_shape();
    let grid_rows = q.rows.div_ceil(bh);
    let grid_cols = q.cols.div_ceil(bw);
    let mut total = 0.0;
    for gr in 0..grid_rows {
        for gc in 0..grid_cols {
            let r1 = ((gr + 1) * bh).min(q.rows);
            let c1 = ((gc + 1) * bw).min(q.cols);
            let mut a = Vec::new();
            let mut b = Vec::new();
            for r in gr * bh..r1 {
                for c in gc * bw..c1 {
                    a.push(original.get(r, c));
                    b.push(reconstructed.get(r, c));
                }
            }
            total += cosine_similarity(&a, &b);
        }
    }
    Ok(total / (grid_rows * grid_cols) as f64)
}

/// Transposes a weight-layout tensor without dequantizing: codes and the
/// block grid transpose together and the scales are reused, so
/// `dequantize(transpose_quantized(q))` equals `transpose(dequantize(q))`
/// bit-exactly.
pub fn transpose_quantized(q: &QuantTensor) -> Result<QuantTensor, Fp8Error> {
    if q.layout != BlockLayout::Weight {
        return Err(Fp8Error::TransposeNeedsWeightLayout);
    }
    let (grid_rows, grid_cols) = q.grid();
    let mut codes = vec![0u8; q.codes.len()];
    for r in 0..q.rows {
        for c in 0..q.cols {
            codes[c * q.rows + r] = q.codes[r * q.cols + c];
        }
    }
    let mut scales = vec![1.0; q.scales.len()];
    for gr in 0..grid_rows {
        for gc in 0..grid_cols {
            scales[gc * grid_rows + gr] = q.scales[gr * grid_cols + gc];
        }
    }
    Ok(QuantTensor {
        rows: q.cols,
        cols: q.rows,
        layout: q.layout,
        codes,
        scales,
    })
}

/// Alert thresholds for [`audit`].
#[derive(Debug, Clone, PartialEq)]
pub struct AuditConfig {
    /// Flag a layer whose underflow rate exceeds this.
    pub underflow_threshold: f64,
    /// Flag a layer whose distortion falls below this.
    pub distortion_threshold: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            underflow_threshold: 0.01,
            distortion_threshold: 0.999,
        }
    }
}

/// One layer's precision health report.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionReport {
    pub layer: String,
    pub underflow_rate: f64,
    pub distortion: f64,
    pub underflow_flagged: bool,
    pub distortion_flagged: bool,
}

impl PrecisionReport {
    pub fn flagged(&self) -> bool {
        self.underflow_flagged || self.distortion_flagged
    }
}

/// Quantizes and reconstructs every layer, reporting underflow/distortion
/// with threshold flags. Per-layer failures are collected, not fail-fast.
pub fn audit(
    layers: &[(String, Matrix, BlockLayout)],
    cfg: &AuditConfig,
) -> Vec<Result<PrecisionReport, Fp8Error>> {
    layers
        .iter()
        .map(|(name, tensor, layout)| {
            let q = quantize(tensor, *layout)?;
            let underflow = underflow_rate(tensor, &q)?;
            let dist = distortion(tensor, &q)?;
            Ok(PrecisionReport {
                layer: name.clone(),
                underflow_rate: underflow,
                distortion: dist,
                underflow_flagged: underflow > cfg.underflow_threshold,
                distortion_flagged: dist < cfg.distortion_threshold,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256StarStar;

    #[test]
    fn zero_round_trips() {
        assert_eq!(e4m3_encode(0.0), 0x00);
        assert_eq!(e4m3_decode(0x00), 0.0);
        assert_eq!(e4m3_decode(0x80), 0.0);
        assert!(e4m3_decode(0x80).is_sign_negative());
    }

    #[test]
    fn max_finite_is_448() {
        let code = e4m3_encode(448.0);
        assert_eq!(code, 0x7E);
        assert_eq!(e4m3_decode(code), 448.0);
    }

    #[test]
    fn overflow_saturates() {
        assert_eq!(e4m3_decode(e4m3_encode(1000.0)), 448.0);
        assert_eq!(e4m3_decode(e4m3_encode(-1e9)), -448.0);
        assert_eq!(e4m3_decode(e4m3_encode(f64::MAX)), 448.0);
    }

    #[test]
    fn min_subnormal_is_2_pow_minus_9() {
        assert_eq!(e4m3_decode(0x01), MIN_SUBNORMAL);
        assert_eq!(e4m3_encode(MIN_SUBNORMAL), 0x01);
        // Half the min subnormal ties to even (zero).
        assert_eq!(e4m3_encode(MIN_SUBNORMAL / 2.0), 0x00);
        assert_eq!(e4m3_encode(MIN_SUBNORMAL * 0.75), 0x01);
    }

    #[test]
    fn nan_canonicalizes() {
        assert_eq!(e4m3_encode(f64::NAN), NAN_CODE);
        assert!(e4m3_decode(0x7F).is_nan());
        assert!(e4m3_decode(0xFF).is_nan());
    }

    #[test]
    fn exhaustive_decode_encode_round_trip() {
        for code in 0u16..=255 {
            let code = code as u8;
            let value = e4m3_decode(code);
            if value.is_nan() {
                assert_eq!(e4m3_encode(value), NAN_CODE);
                continue;
            }
            let back = e4m3_encode(value);
            assert_eq!(back, code, "code {code:#04x} decoded to {value}");
        }
    }

    #[test]
    fn encode_monotone_on_grid() {
        // Monotone non-decreasing decoded value over a dense grid spanning
        // the full range (both signs).
        let mut prev = f64::NEG_INFINITY;
        let n = 1_000_000;
        for i in 0..=n {
            let x = -500.0 + 1000.0 * i as f64 / n as f64;
            let v = e4m3_decode(e4m3_encode(x));
            assert!(v >= prev, "x = {x}: {v} < {prev}");
            prev = v;
        }
    }

    #[test]
    fn encode_picks_nearest() {
        // The grid steps by 2 in [16, 32): 25 ties between 24 and 26 and
        // resolves to the even mantissa (24).
        assert_eq!(e4m3_decode(e4m3_encode(25.0)), 24.0);
        assert_eq!(e4m3_decode(e4m3_encode(25.1)), 26.0);
        assert_eq!(e4m3_decode(e4m3_encode(24.9)), 24.0);
        assert_eq!(e4m3_decode(e4m3_encode(26.0)), 26.0);
    }

    fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.next_gaussian()).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn all_zero_tensor_quantizes_clean() {
        let m = Matrix::new(2, 4, vec![0.0; 8]).unwrap();
        let q = quantize(&m, BlockLayout::ActGrad).unwrap();
        assert!(q.codes.iter().all(|&c| c == 0));
        assert!(q.scales.iter().all(|&s| s == 1.0));
        assert_eq!(underflow_rate(&m, &q).unwrap(), 0.0);
        assert_eq!(distortion(&m, &q).unwrap(), 1.0);
    }

    #[test]
    fn representable_grid_round_trips_exactly() {
        // With amax = 448 the scale is exactly 1, so values already on the
        // E4M3 grid survive the round trip bit-exactly.
        let data = vec![448.0, 320.0, 192.0, 20.0, 7.0, 0.875, 0.0625, MIN_SUBNORMAL];
        let m = Matrix::new(1, 8, data.clone()).unwrap();
        let q = quantize(&m, BlockLayout::ActGrad).unwrap();
        let back = dequantize(&q);
        assert_eq!(back.data, data);
        assert_eq!(distortion(&m, &q).unwrap(), 1.0);
        assert_eq!(underflow_rate(&m, &q).unwrap(), 0.0);
    }

    #[test]
    fn scale_domination_underflows_small_entries() {
        // One huge entry per block forces the scale so high that tiny
        // entries fall below half the smallest subnormal and round to zero.
        let mut data = vec![1e-4; 128];
        data[0] = 1e4;
        let m = Matrix::new(1, 128, data).unwrap();
        let q = quantize(&m, BlockLayout::ActGrad).unwrap();
        let rate = underflow_rate(&m, &q).unwrap();
        assert_eq!(rate, 127.0 / 128.0);
    }

    #[test]
    fn outlier_block_exact_underflow() {
        let mut data = vec![1e-6; 128];
        data[0] = 448.0;
        let m = Matrix::new(1, 128, data).unwrap();
        let q = quantize(&m, BlockLayout::ActGrad).unwrap();
        assert_eq!(underflow_rate(&m, &q).unwrap(), 127.0 / 128.0);
    }

    #[test]
    fn gaussian_distortion_high_underflow_zero() {
        let m = gaussian_matrix(256, 256, 42);
        let q = quantize(&m, BlockLayout::ActGrad).unwrap();
        assert_eq!(underflow_rate(&m, &q).unwrap(), 0.0);
        assert!(distortion(&m, &q).unwrap() >= 0.99);
    }

    #[test]
    fn distortion_metric_contract() {
        let m = Matrix::new(1, 4, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let q = quantize(&m, BlockLayout::ActGrad).unwrap();
        // Synthetic negated reconstruction: the metric itself must hit -1.
        let back = dequantize(&q);
        let neg: Vec<f64> = back.data.iter().map(|x| -x).collect();
        assert!((cosine_similarity(&m.data, &neg) + 1.0).abs() < 1e-9);
        // One all-zero side gives 0.
        assert_eq!(cosine_similarity(&m.data, &[0.0, 0.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn quantize_rejects_non_finite() {
        let m = Matrix::new(1, 2, vec![1.0, f64::NAN]).unwrap();
        assert!(matches!(
            quantize(&m, BlockLayout::ActGrad),
            Err(Fp8Error::NonFiniteEntry { row: 0, col: 1 })
        ));
    }

    #[test]
    fn requantization_is_idempotent() {
        let m = gaussian_matrix(64, 64, 7);
        let q = quantize(&m, BlockLayout::ActGrad).unwrap();
        let back = dequantize(&q);
        let q2 = quantize(&back, BlockLayout::ActGrad).unwrap();
        let dist = distortion(&back, &q2).unwrap();
        assert!(dist > 0.999_999_999, "requantize distortion {dist}");
    }

    #[test]
    fn block_locality() {
        let mut base = gaussian_matrix(4, 256, 11);
        let q_before = quantize(&base, BlockLayout::ActGrad).unwrap();
        // Perturb one element in block (2, 1): only that block may change.
        base.data[2 * 256 + 200] += 0.5;
        let q_after = quantize(&base, BlockLayout::ActGrad).unwrap();
        for r in 0..4 {
            for c in 0..256 {
                if r == 2 && c >= 128 {
                    continue;
                }
                assert_eq!(
                    q_before.codes[r * 256 + c],
                    q_after.codes[r * 256 + c],
                    "code ({r},{c}) changed outside the perturbed block"
                );
            }
        }
        let grid_cols = 2;
        for gr in 0..4 {
            for gc in 0..grid_cols {
                if gr == 2 && gc == 1 {
                    continue;
                }
                assert_eq!(
                    q_before.scales[gr * grid_cols + gc],
                    q_after.scales[gr * grid_cols + gc]
                );
            }
        }
    }

    #[test]
    fn transpose_equivalence_square() {
        let m = gaussian_matrix(128, 128, 3);
        let q = quantize(&m, BlockLayout::Weight).unwrap();
        let qt = transpose_quantized(&q).unwrap();
        let a = dequantize(&qt);
        let b = dequantize(&q).transpose();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn transpose_equivalence_rectangular() {
        let m = gaussian_matrix(256, 384, 9);
        let q = quantize(&m, BlockLayout::Weight).unwrap();
        let qt = transpose_quantized(&q).unwrap();
        let a = dequantize(&qt);
        let b = dequantize(&q).transpose();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn double_transpose_is_identity() {
        let m = gaussian_matrix(200, 72, 5);
        let q = quantize(&m, BlockLayout::Weight).unwrap();
        let back = transpose_quantized(&transpose_quantized(&q).unwrap()).unwrap();
        assert_eq!(q.codes, back.codes);
        assert_eq!(q.scales, back.scales);
    }

    #[test]
    fn transpose_rejects_act_grad_layout() {
        let m = gaussian_matrix(4, 128, 1);
        let q = quantize(&m, BlockLayout::ActGrad).unwrap();
        assert!(matches!(
            transpose_quantized(&q),
            Err(Fp8Error::TransposeNeedsWeightLayout)
        ));
    }

    #[test]
    fn audit_flags_outlier_layer() {
        let healthy = gaussian_matrix(64, 128, 21);
        let mut spiky_data = vec![0.001; 128];
        spiky_data[5] = 1e4;
        let spiky = Matrix::new(1, 128, spiky_data).unwrap();
        let layers = vec![
            (String::from("mlp.up"), healthy, BlockLayout::ActGrad),
            (String::from("attn.qkv"), spiky, BlockLayout::ActGrad),
        ];
        let reports = audit(&layers, &AuditConfig::default());
        let healthy_report = reports[0].as_ref().unwrap();
        assert!(!healthy_report.flagged());
        let spiky_report = reports[1].as_ref().unwrap();
        assert!(spiky_report.underflow_flagged);
    }

    #[test]
    fn audit_empty_is_empty() {
        assert!(audit(&[], &AuditConfig::default()).is_empty());
    }

    #[test]
    fn audit_collects_errors_without_failing_fast() {
        let bad = Matrix::new(1, 2, vec![f64::INFINITY, 0.0]).unwrap();
        let good = Matrix::new(1, 2, vec![1.0, 2.0]).unwrap();
        let layers = vec![
            (String::from("bad"), bad, BlockLayout::ActGrad),
            (String::from("good"), good, BlockLayout::ActGrad),
        ];
        let reports = audit(&layers, &AuditConfig::default());
        assert!(reports[0].is_err());
        assert!(reports[1].is_ok());
    }

    #[test]
    fn nan_codes_propagate_and_flag() {
        let m = Matrix::new(1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut q = quantize(&m, BlockLayout::ActGrad).unwrap();
        assert!(!q.has_nan());
        q.codes[2] = NAN_CODE;
        assert!(q.has_nan());
        let back = dequantize(&q);
        assert!(back.data[2].is_nan());
        assert!(back.data[0].is_finite());
    }
}
