//! Schedule validity, closed-form, and monotonicity checks for the pipeline
//! simulator, plus save-interval optimality over random inputs.

use sparse_forge_core::pipeline::{
    build_instruction_order, failover_overhead, optimal_save_interval, simulate_schedule,
    split_mtp, validate_schedule, LayerKind, LayerSpec, PartitionPlan, Phase, RecomputeMode,
    SimConfig,
};
use sparse_forge_core::rng::Xoshiro256StarStar;

fn moe_layers(n: usize) -> Vec<LayerSpec> {
    (0..n)
        .map(|_| LayerSpec::with_defaults(LayerKind::MoE))
        .collect()
}

#[test]
fn closed_form_bubble_across_grid() {
    for p in 2..=8usize {
        for m in [p, 2 * p, 3 * p, 4 * p] {
            let layers = moe_layers(p);
            let plan = PartitionPlan::contiguous(p, p);
            let (result, events) =
                simulate_schedule(&plan, &layers, m, &SimConfig::default()).unwrap();
            validate_schedule(&events, p, 1, m, 0).unwrap();
            for &busy in &result.busy {
                let lhs = (result.makespan - busy) as u128 * (m + p - 1) as u128;
                let rhs = result.makespan as u128 * (p - 1) as u128;
                assert_eq!(lhs, rhs, "p={p} m={m}");
            }
        }
    }
}

#[test]
fn every_instruction_stream_covers_each_pair_once() {
    for p in 1..=4usize {
        for v in 1..=3usize {
            for m in [p, 2 * p, 4 * p] {
                for rank in 0..p {
                    let order = build_instruction_order(p, v, m, rank).unwrap();
                    assert_eq!(order.len(), 2 * m * v);
                    let mut fwd: Vec<(usize, usize)> = order
                        .iter()
                        .filter(|(ph, _, _)| *ph == Phase::Forward)
                        .map(|&(_, mb, c)| (mb, c))
                        .collect();
                    let mut bwd: Vec<(usize, usize)> = order
                        .iter()
                        .filter(|(ph, _, _)| *ph == Phase::Backward)
                        .map(|&(_, mb, c)| (mb, c))
                        .collect();
                    fwd.sort_unstable();
                    bwd.sort_unstable();
                    let expected: Vec<(usize, usize)> =
                        (0..m).flat_map(|mb| (0..v).map(move |c| (mb, c))).collect();
                    let mut expected = expected;
                    expected.sort_unstable();
                    assert_eq!(fwd, expected);
                    assert_eq!(bwd, expected);
                }
            }
        }
    }
}

#[test]
fn validator_passes_heterogeneous_interleaved_runs() {
    // Mixed layer kinds, recompute modes, comm latency, and an empty stage.
    let mut layers = vec![
        LayerSpec::with_defaults(LayerKind::Embedding),
        LayerSpec::with_defaults(LayerKind::Dense),
        LayerSpec::with_defaults(LayerKind::MoE),
        LayerSpec::with_defaults(LayerKind::MoE),
        LayerSpec::with_defaults(LayerKind::MoE),
        LayerSpec::with_defaults(LayerKind::Mtp { sublayers: 1 }),
        LayerSpec::with_defaults(LayerKind::LmLoss),
    ];
    layers = split_mtp(&layers, 0.7).unwrap();
    assert_eq!(layers.len(), 8);
    let mut plan = PartitionPlan {
        pp: 2,
        vpp: 2,
        assignment: vec![vec![vec![0, 1], vec![4, 5]], vec![vec![2, 3], vec![6, 7]]],
        recompute: Default::default(),
    };
    plan.recompute.moe = RecomputeMode::FastExpert;
    plan.recompute.mtp_transformer = RecomputeMode::MtpPartial;
    let config = SimConfig {
        comm_latency: 0.05,
        ..SimConfig::default()
    };
    let (result, events) = simulate_schedule(&plan, &layers, 4, &config).unwrap();
    validate_schedule(&events, 2, 2, 4, 50).unwrap();
    assert!(result.bubble_max < 1.0);
    assert!(result.makespan >= *result.busy.iter().max().unwrap());

    // Empty-stage variant still validates.
    let plan_empty = PartitionPlan {
        pp: 2,
        vpp: 2,
        assignment: vec![vec![vec![0, 1, 2], vec![5, 6, 7]], vec![vec![3, 4], vec![]]],
        recompute: Default::default(),
    };
    let (_, events) = simulate_schedule(&plan_empty, &layers, 4, &config).unwrap();
    validate_schedule(&events, 2, 2, 4, 50).unwrap();
}

#[test]
fn single_rank_multi_chunk_schedules_cleanly() {
    // p = 1 with several virtual stages: all chunks share one rank, so the
    // cross-stage dependencies must resolve without deadlock.
    let layers = moe_layers(3);
    let plan = PartitionPlan {
        pp: 1,
        vpp: 3,
        assignment: vec![vec![vec![0], vec![1], vec![2]]],
        recompute: Default::default(),
    };
    let config = SimConfig {
        comm_latency: 0.1,
        ..SimConfig::default()
    };
    let (result, events) = simulate_schedule(&plan, &layers, 3, &config).unwrap();
    validate_schedule(&events, 1, 3, 3, 100).unwrap();
    // One rank does every unit of work; only comm gaps can open bubbles.
    assert_eq!(result.busy.len(), 1);
    assert!(result.makespan >= result.busy[0]);
}

#[test]
fn makespan_monotone_in_costs_and_comm() {
    let mut rng = Xoshiro256StarStar::seed_from_u64(2);
    for _ in 0..20 {
        let p = 2 + rng.next_below(3) as usize;
        let n_layers = p * (1 + rng.next_below(3) as usize);
        let layers: Vec<LayerSpec> = (0..n_layers)
            .map(|_| LayerSpec::with_fwd_cost(LayerKind::MoE, 0.5 + rng.next_f64()))
            .collect();
        let plan = PartitionPlan::contiguous(p, n_layers);
        let m = p * 2;
        let (base, _) = simulate_schedule(&plan, &layers, m, &SimConfig::default()).unwrap();

        let mut bumped = layers.clone();
        let idx = rng.next_below(n_layers as u64) as usize;
        bumped[idx].fwd_cost += 0.25;
        bumped[idx].bwd_cost += 0.5;
        let (after, _) = simulate_schedule(&plan, &bumped, m, &SimConfig::default()).unwrap();
        assert!(after.makespan >= base.makespan);

        let config = SimConfig {
            comm_latency: 0.2,
            ..SimConfig::default()
        };
        let (with_comm, _) = simulate_schedule(&plan, &layers, m, &config).unwrap();
        assert!(with_comm.makespan >= base.makespan);
    }
}

#[test]
fn busy_time_equals_work_conservation() {
    let mut rng = Xoshiro256StarStar::seed_from_u64(3);
    for _ in 0..10 {
        let p = 2 + rng.next_below(3) as usize;
        let n_layers = p * 2;
        let layers: Vec<LayerSpec> = (0..n_layers)
            .map(|_| LayerSpec::with_fwd_cost(LayerKind::MoE, 0.25 + rng.next_f64()))
            .collect();
        let plan = PartitionPlan::contiguous(p, n_layers);
        let m = p;
        let config = SimConfig::default();
        let (result, events) = simulate_schedule(&plan, &layers, m, &config).unwrap();
        validate_schedule(&events, p, 1, m, 0).unwrap();
        let per_mb: u64 = layers
            .iter()
            .map(|l| {
                let f = (l.fwd_cost * config.tick_resolution as f64).round() as u64;
                let b = (l.bwd_cost * config.tick_resolution as f64).round() as u64;
                f + b
            })
            .sum();
        assert_eq!(result.busy.iter().sum::<u64>(), m as u64 * per_mb);
    }
}

#[test]
fn save_interval_beats_perturbed_intervals() {
    let mut rng = Xoshiro256StarStar::seed_from_u64(9);
    for _ in 0..1000 {
        let c = 0.1 + 20.0 * rng.next_f64();
        let f = 0.1 + 10.0 * rng.next_f64();
        let optimum = optimal_save_interval(c, f).unwrap();
        let at_opt = failover_overhead(c, f, 0.0, optimum.interval_minutes).unwrap();
        assert!((at_opt - optimum.daily_overhead_minutes).abs() < 1e-9 * at_opt.max(1.0));
        for factor in [0.5, 0.9, 1.1, 2.0] {
            let perturbed =
                failover_overhead(c, f, 0.0, optimum.interval_minutes * factor).unwrap();
            assert!(
                perturbed >= at_opt - 1e-12,
                "C={c} F={f} factor={factor}: {perturbed} < {at_opt}"
            );
        }
    }
}
