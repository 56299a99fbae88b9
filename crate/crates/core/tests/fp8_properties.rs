//! Codec exhaustiveness, transpose equivalence, and metric bounds.

use proptest::prelude::*;
use sparse_forge_core::fp8::{
    distortion, e4m3_decode, e4m3_encode, quantize, transpose_quantized, underflow_rate,
    BlockLayout, Matrix, MAX_FINITE, MIN_SUBNORMAL,
};
use sparse_forge_core::rng::Xoshiro256StarStar;

#[test]
fn all_codes_decode_and_re_encode() {
    let mut finite = 0;
    for code in 0u16..=255 {
        let code = code as u8;
        let v = e4m3_decode(code);
        if v.is_nan() {
            continue;
        }
        finite += 1;
        assert!(v.abs() <= MAX_FINITE);
        assert_eq!(e4m3_encode(v), code);
    }
    assert_eq!(finite, 254); // two NaN patterns, everything else finite
}

#[test]
fn extremes_are_exact() {
    assert_eq!(e4m3_decode(0x7E), MAX_FINITE);
    assert_eq!(e4m3_decode(0xFE), -MAX_FINITE);
    assert_eq!(e4m3_decode(0x01), MIN_SUBNORMAL);
    assert_eq!(MIN_SUBNORMAL, 2.0f64.powi(-9));
}

proptest! {
    #[test]
    fn transpose_equivalence_random_shapes(
        rows in 1usize..300,
        cols in 1usize..300,
        seed in any::<u64>(),
    ) {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| 10.0 * rng.next_gaussian()).collect();
        let m = Matrix::new(rows, cols, data).unwrap();
        let q = quantize(&m, BlockLayout::Weight).unwrap();
        let qt = transpose_quantized(&q).unwrap();
        let a = sparse_forge_core::fp8::dequantize(&qt);
        let b = sparse_forge_core::fp8::dequantize(&q).transpose();
        prop_assert_eq!(a.data, b.data);
    }

    #[test]
    fn underflow_rate_is_a_rate(seed in any::<u64>(), scale_pow in -6i32..6) {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let scale = 10f64.powi(scale_pow);
        let data: Vec<f64> = (0..256).map(|_| scale * rng.next_gaussian()).collect();
        let m = Matrix::new(2, 128, data).unwrap();
        let q = quantize(&m, BlockLayout::ActGrad).unwrap();
        let rate = underflow_rate(&m, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&rate));
        let d = distortion(&m, &q).unwrap();
        prop_assert!((-1.0..=1.0).contains(&d));
    }

    #[test]
    fn no_underflow_when_dynamic_range_fits(seed in any::<u64>()) {
        // All magnitudes within [amax/448 * 2^-9 ... amax] after scaling can
        // never round to zero; uniform magnitudes in [0.5, 1.5] qualify.
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let data: Vec<f64> = (0..128)
            .map(|_| (0.5 + rng.next_f64()) * if rng.next_f64() < 0.5 { -1.0 } else { 1.0 })
            .collect();
        let m = Matrix::new(1, 128, data).unwrap();
        let q = quantize(&m, BlockLayout::ActGrad).unwrap();
        prop_assert_eq!(underflow_rate(&m, &q).unwrap(), 0.0);
    }
}

#[test]
fn encode_monotone_on_million_point_grid() {
    let n = 1_000_000;
    let mut prev = f64::NEG_INFINITY;
    for i in 0..=n {
        let x = -460.0 + 920.0 * i as f64 / n as f64;
        let v = e4m3_decode(e4m3_encode(x));
        assert!(v >= prev, "encode not monotone at {x}");
        prev = v;
    }
}
