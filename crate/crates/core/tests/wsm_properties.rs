//! Property tests for the checkpoint-merge conversions.

use proptest::prelude::*;
use sparse_forge_core::rng::Xoshiro256StarStar;
use sparse_forge_core::wsm::{
    decay_to_merge_weights, merge_checkpoints, merge_to_gradient_weights, simulate_equivalence,
    CheckpointSeries, GradientWeights, MergeWeights,
};

/// Monotone non-increasing schedule in [0, 1].
fn schedule_strategy(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, 1..max_len).prop_map(|mut v| {
        v.sort_by(|a, b| b.total_cmp(a));
        v
    })
}

/// Non-negative weights normalized onto the simplex.
fn simplex_strategy(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, 2..max_len).prop_map(|v| {
        let sum: f64 = v.iter().sum();
        if sum == 0.0 {
            let n = v.len();
            vec![1.0 / n as f64; n]
        } else {
            v.iter().map(|x| x / sum).collect()
        }
    })
}

proptest! {
    #[test]
    fn conversion_round_trips(w in schedule_strategy(64)) {
        let schedule = GradientWeights::new(w.clone()).unwrap();
        let merge = decay_to_merge_weights(&schedule).unwrap();
        let back = merge_to_gradient_weights(&merge).unwrap();
        for (a, b) in w.iter().zip(back.values()) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn merge_weights_form_a_simplex(w in schedule_strategy(64)) {
        let schedule = GradientWeights::new(w).unwrap();
        let merge = decay_to_merge_weights(&schedule).unwrap();
        let sum: f64 = merge.values().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(merge.values().iter().all(|&c| c >= 0.0));
    }

    #[test]
    fn reverse_round_trip(c in simplex_strategy(64)) {
        let merge = MergeWeights::new(c.clone()).unwrap();
        let schedule = merge_to_gradient_weights(&merge).unwrap();
        let back = decay_to_merge_weights(&schedule).unwrap();
        for (a, b) in c.iter().zip(back.values()) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn equivalence_holds_for_random_gradients(
        w in schedule_strategy(16),
        seed in any::<u64>(),
    ) {
        let schedule = GradientWeights::new(w.clone()).unwrap();
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let dim = 32;
        let theta: Vec<f64> = (0..dim).map(|_| rng.next_gaussian()).collect();
        let gradients: Vec<Vec<f64>> = (0..w.len())
            .map(|_| (0..dim).map(|_| 0.1 * rng.next_gaussian()).collect())
            .collect();
        let report = simulate_equivalence(&gradients, &theta, &schedule).unwrap();
        prop_assert!(report.max_abs_diff <= 1e-12, "{}", report.max_abs_diff);
    }
}

#[test]
fn merging_is_permutation_equivariant() {
    let mut rng = Xoshiro256StarStar::seed_from_u64(11);
    let dim = 40;
    let vectors: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..dim).map(|_| rng.next_gaussian()).collect())
        .collect();
    let weights = MergeWeights::new(vec![0.1, 0.2, 0.3, 0.4]).unwrap();

    // Reverse the coordinate order everywhere.
    let permuted: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().rev().copied().collect())
        .collect();

    let base = merge_checkpoints(&CheckpointSeries::new(0, vectors).unwrap(), &weights).unwrap();
    let perm = merge_checkpoints(&CheckpointSeries::new(0, permuted).unwrap(), &weights).unwrap();
    for (i, value) in perm.iter().enumerate() {
        assert_eq!(*value, base[dim - 1 - i]);
    }
}

#[test]
fn merging_is_linear_in_checkpoints() {
    let mut rng = Xoshiro256StarStar::seed_from_u64(13);
    let dim = 24;
    let xs: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..dim).map(|_| rng.next_gaussian()).collect())
        .collect();
    let ys: Vec<Vec<f64>> = (0..3)
        .map(|_| (0..dim).map(|_| rng.next_gaussian()).collect())
        .collect();
    let weights = MergeWeights::new(vec![0.5, 0.25, 0.25]).unwrap();
    let (a, b) = (0.7, -1.3);

    let combined: Vec<Vec<f64>> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| x.iter().zip(y).map(|(xi, yi)| a * xi + b * yi).collect())
        .collect();

    let merged_combined =
        merge_checkpoints(&CheckpointSeries::new(0, combined).unwrap(), &weights).unwrap();
    let merged_x = merge_checkpoints(&CheckpointSeries::new(0, xs).unwrap(), &weights).unwrap();
    let merged_y = merge_checkpoints(&CheckpointSeries::new(0, ys).unwrap(), &weights).unwrap();
    for i in 0..dim {
        let expected = a * merged_x[i] + b * merged_y[i];
        assert!((merged_combined[i] - expected).abs() < 1e-12);
    }
}

#[test]
fn equivalence_scales_to_large_dimension() {
    // One heavyweight case: 64 steps over 10^4 parameters.
    let mut rng = Xoshiro256StarStar::seed_from_u64(7);
    let k = 64;
    let dim = 10_000;
    let w: Vec<f64> = (0..k).map(|i| 1.0 - i as f64 / k as f64).collect();
    let schedule = GradientWeights::new(w).unwrap();
    let theta: Vec<f64> = (0..dim).map(|_| rng.next_gaussian()).collect();
    let gradients: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dim).map(|_| 0.01 * rng.next_gaussian()).collect())
        .collect();
    let report = simulate_equivalence(&gradients, &theta, &schedule).unwrap();
    assert!(report.max_abs_diff <= 1e-12, "{}", report.max_abs_diff);
}
