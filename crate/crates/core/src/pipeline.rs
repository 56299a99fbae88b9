//! Deterministic event-driven simulation of interleaved-1F1B pipeline
//! parallelism over heterogeneous layers, plus checkpoint save-interval math.
//!
//! Ranks execute their instruction stream (warmup forwards, strict 1F1B
//! alternation, cooldown backwards) in order; an instruction starts as soon
//! as its rank is free and its cross-stage dependency has finished, plus a
//! fixed communication latency per stage boundary. Layers differ in cost
//! (dense vs MoE vs MTP vs loss), stages may be empty, and recompute modes
//! add their share of forward cost to the backward pass.
//!
//! Time is integer ticks (a configurable resolution per cost unit) so
//! makespans, busy times, and the classic bubble identity compare exactly.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Default forward-cost units (MoE layer = 1, backward = 2x forward).
pub const DEFAULT_MOE_FWD: f64 = 1.0;
pub const DEFAULT_DENSE_FWD: f64 = 0.5;
pub const DEFAULT_MTP_FWD: f64 = 1.7;
pub const DEFAULT_EMBEDDING_FWD: f64 = 0.5;
pub const DEFAULT_LM_LOSS_FWD: f64 = 0.5;

/// Fraction of an MTP block's cost attributed to its transformer sublayers
/// when splitting (the rest is the loss computation).
pub const DEFAULT_MTP_TRANSFORMER_FRACTION: f64 = 0.7;

#[derive(Debug, Clone, PartialEq)]
pub enum PipelineError {
    InvalidPlan(String),
    /// More than one aggregate MTP block in the layer list.
    MultipleMtpBlocks,
    InvalidSplitFraction(f64),
    /// Interleaving requires micro-batches divisible by the pipeline size.
    DivisibilityViolated {
        micro_batches: usize,
        pp: usize,
    },
    InvalidLayerCost(String),
    /// The relaxation loop stalled: the plan's dependencies cannot be met.
    DependencyCycle,
    /// Schedule validation failures.
    EventOverlap {
        rank: usize,
        at: u64,
    },
    MissingExecution {
        micro_batch: usize,
        stage: usize,
        phase: Phase,
    },
    DuplicateExecution {
        micro_batch: usize,
        stage: usize,
        phase: Phase,
    },
    DependencyViolated {
        micro_batch: usize,
        stage: usize,
        phase: Phase,
    },
    InvalidInput(String),
}

impl core::fmt::Display for PipelineError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::InvalidPlan(reason) => write!(f, "invalid partition plan: {reason}"),
            Self::MultipleMtpBlocks => write!(f, "layer list contains more than one MTP block"),
            Self::InvalidSplitFraction(x) => {
                write!(f, "MTP split fraction {x} must lie strictly inside (0, 1)")
            }
            Self::DivisibilityViolated { micro_batches, pp } => write!(
                f,
                "interleaved schedule needs micro_batches ({micro_batches}) divisible by pp ({pp})"
            ),
            Self::InvalidLayerCost(reason) => write!(f, "invalid layer cost: {reason}"),
            Self::DependencyCycle => write!(f, "schedule dependencies cannot be satisfied"),
            Self::EventOverlap { rank, at } => {
                write!(f, "rank {rank} has overlapping events at tick {at}")
            }
            Self::MissingExecution {
                micro_batch,
                stage,
                phase,
            } => write!(f, "missing {phase:?} of micro-batch {micro_batch} at stage {stage}"),
            Self::DuplicateExecution {
                micro_batch,
                stage,
                phase,
            } => write!(
                f,
                "duplicate {phase:?} of micro-batch {micro_batch} at stage {stage}"
            ),
            Self::DependencyViolated {
                micro_batch,
                stage,
                phase,
            } => write!(
                f,
                "{phase:?} of micro-batch {micro_batch} at stage {stage} started before its dependency finished"
            ),
            Self::InvalidInput(reason) => write!(f, "{reason}"),
        }
    }
}

impl core::error::Error for PipelineError {}

/// Model layer classes. `Mtp` is the unsplit multi-token-prediction block
/// (its transformer sublayers plus loss computation scheduled as one unit);
/// [`split_mtp`] expands it into `MtpTransformer` layers and an `MtpLoss`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Embedding,
    Dense,
    MoE,
    Mtp { sublayers: usize },
    MtpTransformer,
    MtpLoss,
    LmLoss,
}

/// One schedulable layer with its costs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub fwd_cost: f64,
    pub bwd_cost: f64,
    pub act_memory: f64,
}

impl LayerSpec {
    /// A layer with the default cost table (backward = 2x forward,
    /// activation memory proportional to forward cost).
    pub fn with_defaults(kind: LayerKind) -> Self {
        let fwd = match kind {
            LayerKind::Embedding => DEFAULT_EMBEDDING_FWD,
            LayerKind::Dense => DEFAULT_DENSE_FWD,
            LayerKind::MoE => DEFAULT_MOE_FWD,
            LayerKind::Mtp { .. } => DEFAULT_MTP_FWD,
            LayerKind::MtpTransformer => DEFAULT_MTP_FWD * DEFAULT_MTP_TRANSFORMER_FRACTION,
            LayerKind::MtpLoss => DEFAULT_MTP_FWD * (1.0 - DEFAULT_MTP_TRANSFORMER_FRACTION),
            LayerKind::LmLoss => DEFAULT_LM_LOSS_FWD,
        };
        Self {
            kind,
            fwd_cost: fwd,
            bwd_cost: 2.0 * fwd,
            act_memory: fwd,
        }
    }

    pub fn with_fwd_cost(kind: LayerKind, fwd_cost: f64) -> Self {
        Self {
            kind,
            fwd_cost,
            bwd_cost: 2.0 * fwd_cost,
            act_memory: fwd_cost,
        }
    }
}

/// Replaces the (single) MTP block with its `k` transformer sublayers plus a
/// loss layer. `transformer_fraction` of each cost goes to the transformer
/// part (split evenly over the sublayers); totals are conserved.
pub fn split_mtp(
    layers: &[LayerSpec],
    transformer_fraction: f64,
) -> Result<Vec<LayerSpec>, PipelineError> {
    if !(transformer_fraction > 0.0 && transformer_fraction < 1.0) {
        return Err(PipelineError::InvalidSplitFraction(transformer_fraction));
    }
    let blocks = layers
        .iter()
        .filter(|l| matches!(l.kind, LayerKind::Mtp { .. }))
        .count();
    if blocks > 1 {
        return Err(PipelineError::MultipleMtpBlocks);
    }
    let mut out = Vec::with_capacity(layers.len() + 1);
    for layer in layers {
        match layer.kind {
            LayerKind::Mtp { sublayers } => {
                if sublayers == 0 {
                    return Err(PipelineError::InvalidInput(String::from(
                        "MTP block must contain at least one transformer sublayer",
                    )));
                }
                let k = sublayers as f64;
                for _ in 0..sublayers {
                    out.push(LayerSpec {
                        kind: LayerKind::MtpTransformer,
                        fwd_cost: layer.fwd_cost * transformer_fraction / k,
                        bwd_cost: layer.bwd_cost * transformer_fraction / k,
                        act_memory: layer.act_memory * transformer_fraction / k,
                    });
                }
                out.push(LayerSpec {
                    kind: LayerKind::MtpLoss,
                    fwd_cost: layer.fwd_cost * (1.0 - transformer_fraction),
                    bwd_cost: layer.bwd_cost * (1.0 - transformer_fraction),
                    act_memory: layer.act_memory * (1.0 - transformer_fraction),
                });
            }
            _ => out.push(*layer),
        }
    }
    Ok(out)
}

/// Recompute mode for the backward pass of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecomputeMode {
    /// Keep all activations; no extra backward cost.
    #[default]
    None,
    /// Re-run the whole forward before the backward.
    Full,
    /// Recompute only the transformer portion of MTP layers.
    MtpPartial,
    /// MoE fast path: recomputation cost halved.
    FastExpert,
}

/// Per-layer-kind recompute selection.
#[derive(Debug, Clone, PartialEq)]
pub struct RecomputePolicy {
    pub embedding: RecomputeMode,
    pub dense: RecomputeMode,
    pub moe: RecomputeMode,
    pub mtp: RecomputeMode,
    pub mtp_transformer: RecomputeMode,
    pub mtp_loss: RecomputeMode,
    pub lm_loss: RecomputeMode,
    /// Transformer share of an unsplit MTP block, used by `MtpPartial`.
    pub mtp_transformer_fraction: f64,
}

impl Default for RecomputePolicy {
    fn default() -> Self {
        Self {
            embedding: RecomputeMode::None,
            dense: RecomputeMode::None,
            moe: RecomputeMode::None,
            mtp: RecomputeMode::None,
            mtp_transformer: RecomputeMode::None,
            mtp_loss: RecomputeMode::None,
            lm_loss: RecomputeMode::None,
            mtp_transformer_fraction: DEFAULT_MTP_TRANSFORMER_FRACTION,
        }
    }
}

impl RecomputePolicy {
    pub fn mode_for(&self, kind: LayerKind) -> RecomputeMode {
        match kind {
            LayerKind::Embedding => self.embedding,
            LayerKind::Dense => self.dense,
            LayerKind::MoE => self.moe,
            LayerKind::Mtp { .. } => self.mtp,
            LayerKind::MtpTransformer => self.mtp_transformer,
            LayerKind::MtpLoss => self.mtp_loss,
            LayerKind::LmLoss => self.lm_loss,
        }
    }

    /// Extra backward cost added by recomputation for one layer.
    pub fn recompute_cost(&self, layer: &LayerSpec) -> f64 {
        match self.mode_for(layer.kind) {
            RecomputeMode::None => 0.0,
            RecomputeMode::Full => layer.fwd_cost,
            RecomputeMode::FastExpert => 0.5 * layer.fwd_cost,
            RecomputeMode::MtpPartial => match layer.kind {
                LayerKind::MtpTransformer => layer.fwd_cost,
                LayerKind::Mtp { .. } => layer.fwd_cost * self.mtp_transformer_fraction,
                _ => 0.0,
            },
        }
    }
}

/// Assignment of model layers onto (rank, virtual-stage) slots.
///
/// `assignment[rank][chunk]` lists the model layer indices of pipeline stage
/// `chunk · pp + rank`; stages may be empty. Flattened in stage order the
/// indices must walk the model front to back.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub pp: usize,
    pub vpp: usize,
    pub assignment: Vec<Vec<Vec<usize>>>,
    pub recompute: RecomputePolicy,
}

impl PartitionPlan {
    /// Evenly chunked non-interleaved plan (layers in order, one stage per
    /// rank, remainder spread over the leading stages).
    pub fn contiguous(pp: usize, n_layers: usize) -> Self {
        let base = n_layers / pp;
        let extra = n_layers % pp;
        let mut next = 0usize;
        let mut assignment = Vec::with_capacity(pp);
        for rank in 0..pp {
            let take = base + usize::from(rank < extra);
            assignment.push(vec![(next..next + take).collect::<Vec<_>>()]);
            next += take;
        }
        Self {
            pp,
            vpp: 1,
            assignment,
            recompute: RecomputePolicy::default(),
        }
    }

    pub fn stages(&self) -> usize {
        self.pp * self.vpp
    }

    /// Layer indices of a pipeline stage.
    pub fn stage_layers(&self, stage: usize) -> &[usize] {
        let rank = stage % self.pp;
        let chunk = stage / self.pp;
        &self.assignment[rank][chunk]
    }

    pub fn validate(&self, n_layers: usize) -> Result<(), PipelineError> {
        if self.pp == 0 || self.vpp == 0 {
            return Err(PipelineError::InvalidPlan(String::from(
                "pp and vpp must be >= 1",
            )));
        }
        if self.assignment.len() != self.pp {
            return Err(PipelineError::InvalidPlan(format!(
                "assignment has {} ranks, plan says {}",
                self.assignment.len(),
                self.pp
            )));
        }
        for (r, chunks) in self.assignment.iter().enumerate() {
            if chunks.len() != self.vpp {
                return Err(PipelineError::InvalidPlan(format!(
                    "rank {r} has {} chunks, plan says {}",
                    chunks.len(),
                    self.vpp
                )));
            }
        }
        // Walking stages in order must walk the model in order, once.
        let mut expected = 0usize;
        for stage in 0..self.stages() {
            for &layer in self.stage_layers(stage) {
                if layer != expected {
                    return Err(PipelineError::InvalidPlan(format!(
                        "stage {stage} holds layer {layer}, expected {expected} \
                         (assignments must preserve model order, each layer once)"
                    )));
                }
                expected += 1;
            }
        }
        if expected != n_layers {
            return Err(PipelineError::InvalidPlan(format!(
                "plan assigns {expected} layers, model has {n_layers}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Forward,
    Backward,
}

/// One executed instruction in the simulated timeline (times in ticks).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleEvent {
    pub rank: usize,
    pub start: u64,
    pub end: u64,
    pub micro_batch: usize,
    pub chunk: usize,
    pub phase: Phase,
}

/// Simulation controls.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Latency added per crossed stage boundary, in cost units.
    pub comm_latency: f64,
    /// Integer ticks per cost unit.
    pub tick_resolution: u64,
    /// Fraction of activation memory still held when a layer recomputes.
    pub recompute_memory_fraction: f64,
    /// Optional per-rank memory threshold; exceeding ranks are reported.
    pub memory_limit: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            comm_latency: 0.0,
            tick_resolution: 1000,
            recompute_memory_fraction: 0.25,
            memory_limit: None,
        }
    }
}

/// Aggregate timing and memory outcome of one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub makespan: u64,
    pub busy: Vec<u64>,
    pub bubble_ratio: Vec<f64>,
    pub bubble_max: f64,
    pub bubble_mean: f64,
    pub peak_memory: Vec<f64>,
    /// Ranks whose peak memory exceeded the configured limit.
    pub over_memory_limit: Vec<usize>,
}

/// Builds one rank's instruction stream for interleaved 1F1B.
///
/// Warmup forwards number `min(m·v, 2(p−r−1) + (v−1)·p)` when `v > 1`, else
/// `min(m, p−r−1)`; forwards walk micro-batches in groups of `p` per chunk;
/// after warmup the stream strictly alternates one forward with one
/// backward, and the leftover backwards drain in order.
pub fn build_instruction_order(
    pp: usize,
    vpp: usize,
    micro_batches: usize,
    rank: usize,
) -> Result<Vec<(Phase, usize, usize)>, PipelineError> {
    if pp == 0 || vpp == 0 || micro_batches == 0 || rank >= pp {
        return Err(PipelineError::InvalidInput(format!(
            "need pp >= 1, vpp >= 1, m >= 1, rank < pp (got p={pp}, v={vpp}, m={micro_batches}, rank={rank})"
        )));
    }
    if vpp > 1 && !micro_batches.is_multiple_of(pp) {
        return Err(PipelineError::DivisibilityViolated { micro_batches, pp });
    }

    let total = micro_batches * vpp;
    let fwd = |ordinal: usize| -> (usize, usize) {
        let group = ordinal / pp;
        let chunk = group % vpp;
        let mb = (group / vpp) * pp + ordinal % pp;
        (mb, chunk)
    };
    let bwd = |ordinal: usize| -> (usize, usize) {
        let group = ordinal / pp;
        let chunk = vpp - 1 - (group % vpp);
        let mb = (group / vpp) * pp + ordinal % pp;
        (mb, chunk)
    };

    let warmup = if vpp > 1 {
        total.min(2 * (pp - rank - 1) + (vpp - 1) * pp)
    } else {
        micro_batches.min(pp - rank - 1)
    };

    let mut order = Vec::with_capacity(2 * total);
    let mut next_fwd = 0usize;
    let mut next_bwd = 0usize;
    while next_fwd < warmup {
        let (mb, chunk) = fwd(next_fwd);
        order.push((Phase::Forward, mb, chunk));
        next_fwd += 1;
    }
    while next_fwd < total {
        let (mb, chunk) = fwd(next_fwd);
        order.push((Phase::Forward, mb, chunk));
        next_fwd += 1;
        let (mb, chunk) = bwd(next_bwd);
        order.push((Phase::Backward, mb, chunk));
        next_bwd += 1;
    }
    while next_bwd < total {
        let (mb, chunk) = bwd(next_bwd);
        order.push((Phase::Backward, mb, chunk));
        next_bwd += 1;
    }
    Ok(order)
}

fn cost_ticks(cost: f64, resolution: u64) -> Result<u64, PipelineError> {
    if !cost.is_finite() || cost < 0.0 {
        return Err(PipelineError::InvalidLayerCost(format!(
            "cost {cost} must be finite and non-negative"
        )));
    }
    Ok(math::round(cost * resolution as f64) as u64)
}

/// Runs the event-driven simulation. Returns the aggregate result plus the
/// full event stream (ticks), suitable for Gantt rendering and validation.
pub fn simulate_schedule(
    plan: &PartitionPlan,
    layers: &[LayerSpec],
    micro_batches: usize,
    config: &SimConfig,
) -> Result<(SimResult, Vec<ScheduleEvent>), PipelineError> {
    plan.validate(layers.len())?;
    if micro_batches == 0 {
        return Err(PipelineError::InvalidInput(String::from(
            "micro_batches must be >= 1",
        )));
    }
    let p = plan.pp;
    let v = plan.vpp;
    let stages = plan.stages();
    let res = config.tick_resolution;
    let comm = cost_ticks(config.comm_latency, res)?;

    // Per-stage forward/backward tick costs (recompute feeds the backward)
    // and held activation memory.
    let mut fwd_ticks = vec![0u64; stages];
    let mut bwd_ticks = vec![0u64; stages];
    let mut stage_memory = vec![0.0f64; stages];
    for stage in 0..stages {
        for &idx in plan.stage_layers(stage) {
            let layer = &layers[idx];
            fwd_ticks[stage] += cost_ticks(layer.fwd_cost, res)?;
            bwd_ticks[stage] += cost_ticks(layer.bwd_cost, res)?
                + cost_ticks(plan.recompute.recompute_cost(layer), res)?;
            let held_fraction = if plan.recompute.mode_for(layer.kind) == RecomputeMode::None {
                1.0
            } else {
                config.recompute_memory_fraction
            };
            stage_memory[stage] += layer.act_memory * held_fraction;
        }
    }

    let orders: Vec<Vec<(Phase, usize, usize)>> = (0..p)
        .map(|r| build_instruction_order(p, v, micro_batches, r))
        .collect::<Result<_, _>>()?;

    // completion[phase][mb][stage]
    let idx = |phase: Phase, mb: usize, stage: usize| -> usize {
        let ph = match phase {
            Phase::Forward => 0,
            Phase::Backward => 1,
        };
        (ph * micro_batches + mb) * stages + stage
    };
    let mut completion: Vec<Option<u64>> = vec![None; 2 * micro_batches * stages];
    let mut pointers = vec![0usize; p];
    let mut rank_time = vec![0u64; p];
    let mut events: Vec<ScheduleEvent> = Vec::with_capacity(2 * micro_batches * v * p);

    let mut remaining: usize = orders.iter().map(Vec::len).sum();
    while remaining > 0 {
        let mut progressed = false;
        for r in 0..p {
            while pointers[r] < orders[r].len() {
                let (phase, mb, chunk) = orders[r][pointers[r]];
                let stage = chunk * p + r;
                let ready = match phase {
                    Phase::Forward => {
                        if stage == 0 {
                            Some(0)
                        } else {
                            completion[idx(Phase::Forward, mb, stage - 1)].map(|t| t + comm)
                        }
                    }
                    Phase::Backward => {
                        let own_fwd = completion[idx(Phase::Forward, mb, stage)];
                        if stage + 1 == stages {
                            own_fwd
                        } else {
                            match (own_fwd, completion[idx(Phase::Backward, mb, stage + 1)]) {
                                (Some(a), Some(b)) => Some(a.max(b + comm)),
                                _ => None,
                            }
                        }
                    }
                };
                let Some(ready) = ready else { break };
                let start = rank_time[r].max(ready);
                let duration = match phase {
                    Phase::Forward => fwd_ticks[stage],
                    Phase::Backward => bwd_ticks[stage],
                };
                let end = start + duration;
                completion[idx(phase, mb, stage)] = Some(end);
                events.push(ScheduleEvent {
                    rank: r,
                    start,
                    end,
                    micro_batch: mb,
                    chunk,
                    phase,
                });
                rank_time[r] = end;
                pointers[r] += 1;
                remaining -= 1;
                progressed = true;
            }
        }
        if !progressed {
            return Err(PipelineError::DependencyCycle);
        }
    }

    let makespan = rank_time.iter().copied().max().unwrap_or(0);
    let mut busy = vec![0u64; p];
    for e in &events {
        busy[e.rank] += e.end - e.start;
    }
    let bubble_ratio: Vec<f64> = busy
        .iter()
        .map(|&b| {
            if makespan == 0 {
                0.0
            } else {
                1.0 - b as f64 / makespan as f64
            }
        })
        .collect();
    let bubble_max = bubble_ratio.iter().copied().fold(0.0, f64::max);
    let bubble_mean = bubble_ratio.iter().sum::<f64>() / p as f64;

    // Peak in-flight activation memory per rank: a stage's activation is
    // held from its forward start until its backward end.
    let mut peak_memory = vec![0.0f64; p];
    for (r, peak) in peak_memory.iter_mut().enumerate() {
        // (time, delta); frees sort before allocations at equal times.
        let mut deltas: Vec<(u64, i8, f64)> = Vec::new();
        for e in events.iter().filter(|e| e.rank == r) {
            let stage = e.chunk * p + r;
            match e.phase {
                Phase::Forward => deltas.push((e.start, 1, stage_memory[stage])),
                Phase::Backward => deltas.push((e.end, 0, stage_memory[stage])),
            }
        }
        deltas.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut live = 0.0f64;
        for (_, tag, amount) in deltas {
            if tag == 1 {
                live += amount;
                *peak = peak.max(live);
            } else {
                live -= amount;
            }
        }
    }
    let over_memory_limit = match config.memory_limit {
        Some(limit) => (0..p).filter(|&r| peak_memory[r] > limit).collect(),
        None => Vec::new(),
    };

    Ok((
        SimResult {
            makespan,
            busy,
            bubble_ratio,
            bubble_max,
            bubble_mean,
            peak_memory,
            over_memory_limit,
        },
        events,
    ))
}

/// Independent validator over an emitted event stream: per-rank events must
/// not overlap, every (micro-batch, stage, phase) must run exactly once, and
/// every cross-stage dependency (plus `comm_ticks`) must be respected.
pub fn validate_schedule(
    events: &[ScheduleEvent],
    pp: usize,
    vpp: usize,
    micro_batches: usize,
    comm_ticks: u64,
) -> Result<(), PipelineError> {
    let stages = pp * vpp;

    // Per-rank non-overlap.
    for r in 0..pp {
        let mut mine: Vec<&ScheduleEvent> = events.iter().filter(|e| e.rank == r).collect();
        mine.sort_by_key(|e| (e.start, e.end));
        for w in mine.windows(2) {
            if w[1].start < w[0].end {
                return Err(PipelineError::EventOverlap {
                    rank: r,
                    at: w[1].start,
                });
            }
        }
    }

    // Exactly-once coverage.
    let mut seen: Vec<Option<(u64, u64)>> = vec![None; 2 * micro_batches * stages];
    let idx = |phase: Phase, mb: usize, stage: usize| -> usize {
        let ph = match phase {
            Phase::Forward => 0,
            Phase::Backward => 1,
        };
        (ph * micro_batches + mb) * stages + stage
    };
    for e in events {
        let stage = e.chunk * pp + e.rank;
        if e.micro_batch >= micro_batches || stage >= stages {
            return Err(PipelineError::InvalidInput(format!(
                "event outside schedule: mb {}, stage {stage}",
                e.micro_batch
            )));
        }
        if e.end < e.start {
            return Err(PipelineError::InvalidInput(String::from(
                "event ends before it starts",
            )));
        }
        let slot = idx(e.phase, e.micro_batch, stage);
        if seen[slot].is_some() {
            return Err(PipelineError::DuplicateExecution {
                micro_batch: e.micro_batch,
                stage,
                phase: e.phase,
            });
        }
        seen[slot] = Some((e.start, e.end));
    }
    for mb in 0..micro_batches {
        for stage in 0..stages {
            for phase in [Phase::Forward, Phase::Backward] {
                if seen[idx(phase, mb, stage)].is_none() {
                    return Err(PipelineError::MissingExecution {
                        micro_batch: mb,
                        stage,
                        phase,
                    });
                }
            }
        }
    }

    // Dependencies.
    for mb in 0..micro_batches {
        for stage in 0..stages {
            let (f_start, f_end) = seen[idx(Phase::Forward, mb, stage)].unwrap();
            let (b_start, _) = seen[idx(Phase::Backward, mb, stage)].unwrap();
            if stage > 0 {
                let (_, prev_end) = seen[idx(Phase::Forward, mb, stage - 1)].unwrap();
                if f_start < prev_end + comm_ticks {
                    return Err(PipelineError::DependencyViolated {
                        micro_batch: mb,
                        stage,
                        phase: Phase::Forward,
                    });
                }
            }
            if b_start < f_end {
                return Err(PipelineError::DependencyViolated {
                    micro_batch: mb,
                    stage,
                    phase: Phase::Backward,
                });
            }
            if stage + 1 < stages {
                let (_, next_end) = seen[idx(Phase::Backward, mb, stage + 1)].unwrap();
                if b_start < next_end + comm_ticks {
                    return Err(PipelineError::DependencyViolated {
                        micro_batch: mb,
                        stage,
                        phase: Phase::Backward,
                    });
                }
            }
        }
    }
    Ok(())
}

/// One plan's outcome inside a comparison report.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanComparison {
    /// Index into the input plan list.
    pub plan_index: usize,
    pub makespan: u64,
    pub bubble_max: f64,
    pub peak_memory_max: f64,
    /// Relative makespan improvement vs the first-listed plan.
    pub improvement_vs_baseline: f64,
}

/// Simulates every plan and ranks them by makespan, then max bubble, then
/// peak memory, then input order. The first-listed plan is the baseline for
/// the relative-improvement column.
pub fn compare_plans(
    plans: &[PartitionPlan],
    layers: &[LayerSpec],
    micro_batches: usize,
    config: &SimConfig,
) -> Result<Vec<PlanComparison>, PipelineError> {
    if plans.is_empty() {
        return Err(PipelineError::InvalidInput(String::from(
            "need at least one plan",
        )));
    }
    let mut rows = Vec::with_capacity(plans.len());
    for (i, plan) in plans.iter().enumerate() {
        let (result, _) = simulate_schedule(plan, layers, micro_batches, config)?;
        rows.push(PlanComparison {
            plan_index: i,
            makespan: result.makespan,
            bubble_max: result.bubble_max,
            peak_memory_max: result.peak_memory.iter().copied().fold(0.0, f64::max),
            improvement_vs_baseline: 0.0,
        });
    }
    let baseline = rows[0].makespan;
    for row in &mut rows {
        row.improvement_vs_baseline = if baseline == 0 {
            0.0
        } else {
            (baseline as f64 - row.makespan as f64) / baseline as f64
        };
    }
    rows.sort_by(|a, b| {
        a.makespan
            .cmp(&b.makespan)
            .then(a.bubble_max.total_cmp(&b.bubble_max))
            .then(a.peak_memory_max.total_cmp(&b.peak_memory_max))
            .then(a.plan_index.cmp(&b.plan_index))
    });
    Ok(rows)
}

/// Optimal checkpoint save interval and its daily overhead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SaveInterval {
    /// Minutes between checkpoint saves.
    pub interval_minutes: f64,
    /// Daily overhead at the optimum, excluding the constant failover term.
    pub daily_overhead_minutes: f64,
}

/// Minimizes the daily cost `E(s) = 1440·C/s + F·s/2` of saving every `s`
/// minutes (cost `C` minutes per save) against `F` failures per day, each
/// losing half an interval on average. The optimum is `s* = √(2880·C/F)`
/// with `E(s*) = 2·√(720·C·F)`.
pub fn optimal_save_interval(
    save_cost_minutes: f64,
    failures_per_day: f64,
) -> Result<SaveInterval, PipelineError> {
    if !(save_cost_minutes > 0.0) || !(failures_per_day > 0.0) {
        return Err(PipelineError::InvalidInput(String::from(
            "save cost and failure rate must be positive",
        )));
    }
    Ok(SaveInterval {
        interval_minutes: math::sqrt(2880.0 * save_cost_minutes / failures_per_day),
        daily_overhead_minutes: 2.0 * math::sqrt(720.0 * save_cost_minutes * failures_per_day),
    })
}

/// Full daily failover overhead `E = 1440·C/s + F·s/2 + F·A` for a given
/// interval `s`, including the constant per-failover recovery cost `A`.
pub fn failover_overhead(
    save_cost_minutes: f64,
    failures_per_day: f64,
    failover_cost_minutes: f64,
    interval_minutes: f64,
) -> Result<f64, PipelineError> {
    if !(save_cost_minutes > 0.0)
        || !(failures_per_day > 0.0)
        || !(failover_cost_minutes >= 0.0)
        || !(interval_minutes > 0.0)
    {
        return Err(PipelineError::InvalidInput(String::from(
            "inputs must be positive (failover cost may be zero)",
        )));
    }
    Ok(1440.0 * save_cost_minutes / interval_minutes
        + failures_per_day * interval_minutes / 2.0
        + failures_per_day * failover_cost_minutes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn homogeneous_plan(p: usize) -> (PartitionPlan, Vec<LayerSpec>) {
        let layers: Vec<LayerSpec> = (0..p)
            .map(|_| LayerSpec::with_defaults(LayerKind::MoE))
            .collect();
        (PartitionPlan::contiguous(p, p), layers)
    }

    #[test]
    fn single_stage_alternates() {
        let order = build_instruction_order(1, 1, 3, 0).unwrap();
        assert_eq!(
            order,
            vec![
                (Phase::Forward, 0, 0),
                (Phase::Backward, 0, 0),
                (Phase::Forward, 1, 0),
                (Phase::Backward, 1, 0),
                (Phase::Forward, 2, 0),
                (Phase::Backward, 2, 0),
            ]
        );
    }

    #[test]
    fn rank0_warmup_non_interleaved() {
        let order = build_instruction_order(4, 1, 8, 0).unwrap();
        let forwards_before_first_backward = order
            .iter()
            .position(|(ph, _, _)| *ph == Phase::Backward)
            .unwrap()
            - 1;
        assert_eq!(forwards_before_first_backward, 3);
        assert_eq!(order.len(), 16);
    }

    #[test]
    fn interleaved_warmup_count() {
        // p = 2, v = 2, m = 2, rank 0: warmup = 2·(p−1) + (v−1)·p = 4.
        let order = build_instruction_order(2, 2, 2, 0).unwrap();
        let first_bwd = order
            .iter()
            .position(|(ph, _, _)| *ph == Phase::Backward)
            .unwrap();
        assert_eq!(first_bwd, 4);
        // Every (mb, chunk) appears once per phase.
        assert_eq!(order.len(), 8);
        let mut fwd: Vec<(usize, usize)> = order
            .iter()
            .filter(|(ph, _, _)| *ph == Phase::Forward)
            .map(|&(_, mb, c)| (mb, c))
            .collect();
        fwd.sort_unstable();
        assert_eq!(fwd, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn interleaving_requires_divisibility() {
        assert!(matches!(
            build_instruction_order(4, 2, 6, 0),
            Err(PipelineError::DivisibilityViolated { .. })
        ));
    }

    #[test]
    fn single_stage_has_zero_bubble() {
        let (plan, layers) = homogeneous_plan(1);
        let (result, events) = simulate_schedule(&plan, &layers, 5, &SimConfig::default()).unwrap();
        assert_eq!(result.bubble_ratio, vec![0.0]);
        validate_schedule(&events, 1, 1, 5, 0).unwrap();
    }

    #[test]
    fn classic_bubble_closed_form() {
        for p in [2usize, 4, 8] {
            for m in [p, 2 * p, 4 * p] {
                let (plan, layers) = homogeneous_plan(p);
                let (result, events) =
                    simulate_schedule(&plan, &layers, m, &SimConfig::default()).unwrap();
                validate_schedule(&events, p, 1, m, 0).unwrap();
                for &busy in &result.busy {
                    // bubble = (p−1)/(m+p−1) exactly, as integers:
                    // (makespan − busy)·(m+p−1) == makespan·(p−1)
                    let lhs = (result.makespan - busy) as u128 * (m + p - 1) as u128;
                    let rhs = result.makespan as u128 * (p - 1) as u128;
                    assert_eq!(lhs, rhs, "p={p}, m={m}");
                }
            }
        }
    }

    #[test]
    fn busy_time_conservation() {
        let layers = vec![
            LayerSpec::with_defaults(LayerKind::Embedding),
            LayerSpec::with_defaults(LayerKind::Dense),
            LayerSpec::with_defaults(LayerKind::MoE),
            LayerSpec::with_defaults(LayerKind::MoE),
            LayerSpec::with_defaults(LayerKind::LmLoss),
        ];
        let mut plan = PartitionPlan::contiguous(2, layers.len());
        plan.recompute.moe = RecomputeMode::FastExpert;
        let m = 6;
        let config = SimConfig::default();
        let (result, _) = simulate_schedule(&plan, &layers, m, &config).unwrap();
        let per_mb: u64 = layers
            .iter()
            .map(|l| {
                cost_ticks(l.fwd_cost, config.tick_resolution).unwrap()
                    + cost_ticks(l.bwd_cost, config.tick_resolution).unwrap()
                    + cost_ticks(plan.recompute.recompute_cost(l), config.tick_resolution).unwrap()
            })
            .sum();
        let total_busy: u64 = result.busy.iter().sum();
        assert_eq!(total_busy, m as u64 * per_mb);
    }

    #[test]
    fn cost_increase_never_reduces_makespan() {
        let (plan, mut layers) = homogeneous_plan(4);
        let (base, _) = simulate_schedule(&plan, &layers, 8, &SimConfig::default()).unwrap();
        layers[2].fwd_cost += 0.5;
        layers[2].bwd_cost += 1.0;
        let (bumped, _) = simulate_schedule(&plan, &layers, 8, &SimConfig::default()).unwrap();
        assert!(bumped.makespan >= base.makespan);
    }

    #[test]
    fn comm_latency_never_reduces_makespan() {
        let (plan, layers) = homogeneous_plan(4);
        let (base, _) = simulate_schedule(&plan, &layers, 8, &SimConfig::default()).unwrap();
        let config = SimConfig {
            comm_latency: 0.1,
            ..SimConfig::default()
        };
        let (with_comm, events) = simulate_schedule(&plan, &layers, 8, &config).unwrap();
        assert!(with_comm.makespan >= base.makespan);
        validate_schedule(&events, 4, 1, 8, 100).unwrap();
    }

    #[test]
    fn empty_stage_is_schedulable() {
        let layers = vec![
            LayerSpec::with_defaults(LayerKind::MoE),
            LayerSpec::with_defaults(LayerKind::MoE),
            LayerSpec::with_defaults(LayerKind::MoE),
        ];
        let plan = PartitionPlan {
            pp: 2,
            vpp: 2,
            assignment: vec![
                vec![vec![0], vec![2]],
                vec![vec![1], vec![]], // empty final stage
            ],
            recompute: RecomputePolicy::default(),
        };
        let (result, events) = simulate_schedule(&plan, &layers, 4, &SimConfig::default()).unwrap();
        validate_schedule(&events, 2, 2, 4, 0).unwrap();
        assert!(result.makespan > 0);
    }

    #[test]
    fn interleaved_schedule_validates() {
        let layers: Vec<LayerSpec> = (0..8)
            .map(|_| LayerSpec::with_defaults(LayerKind::MoE))
            .collect();
        let plan = PartitionPlan {
            pp: 2,
            vpp: 2,
            assignment: vec![vec![vec![0, 1], vec![4, 5]], vec![vec![2, 3], vec![6, 7]]],
            recompute: RecomputePolicy::default(),
        };
        let (_, events) = simulate_schedule(&plan, &layers, 4, &SimConfig::default()).unwrap();
        validate_schedule(&events, 2, 2, 4, 0).unwrap();
    }

    #[test]
    fn plan_validation_rejects_out_of_order_layers() {
        let layers = vec![
            LayerSpec::with_defaults(LayerKind::MoE),
            LayerSpec::with_defaults(LayerKind::MoE),
        ];
        let plan = PartitionPlan {
            pp: 2,
            vpp: 1,
            assignment: vec![vec![vec![1]], vec![vec![0]]],
            recompute: RecomputePolicy::default(),
        };
        assert!(matches!(
            simulate_schedule(&plan, &layers, 2, &SimConfig::default()),
            Err(PipelineError::InvalidPlan(_))
        ));
    }

    #[test]
    fn split_conserves_costs() {
        let layers = vec![
            LayerSpec::with_defaults(LayerKind::MoE),
            LayerSpec::with_defaults(LayerKind::Mtp { sublayers: 1 }),
        ];
        let split = split_mtp(&layers, 0.7).unwrap();
        assert_eq!(split.len(), 3);
        assert_eq!(split[1].kind, LayerKind::MtpTransformer);
        assert_eq!(split[2].kind, LayerKind::MtpLoss);
        assert!((split[1].fwd_cost - 1.19).abs() < 1e-12);
        assert!((split[2].fwd_cost - 0.51).abs() < 1e-12);
        let total: f64 = split[1..].iter().map(|l| l.fwd_cost).sum();
        assert!((total - 1.7).abs() < 1e-12);
    }

    #[test]
    fn split_multiple_sublayers() {
        let layers = vec![LayerSpec::with_defaults(LayerKind::Mtp { sublayers: 2 })];
        let split = split_mtp(&layers, 0.7).unwrap();
        assert_eq!(split.len(), 3);
        assert!(matches!(split[0].kind, LayerKind::MtpTransformer));
        assert!(matches!(split[1].kind, LayerKind::MtpTransformer));
        assert!(matches!(split[2].kind, LayerKind::MtpLoss));
        let total: f64 = split.iter().map(|l| l.fwd_cost).sum();
        assert!((total - 1.7).abs() < 1e-12);
    }

    #[test]
    fn split_rejects_multiple_blocks() {
        let layers = vec![
            LayerSpec::with_defaults(LayerKind::Mtp { sublayers: 1 }),
            LayerSpec::with_defaults(LayerKind::Mtp { sublayers: 1 }),
        ];
        assert!(matches!(
            split_mtp(&layers, 0.7),
            Err(PipelineError::MultipleMtpBlocks)
        ));
    }

    #[test]
    fn mtp_partial_recompute_skips_loss() {
        let policy = RecomputePolicy {
            mtp_transformer: RecomputeMode::MtpPartial,
            mtp_loss: RecomputeMode::MtpPartial,
            ..RecomputePolicy::default()
        };
        let t = LayerSpec::with_defaults(LayerKind::MtpTransformer);
        let l = LayerSpec::with_defaults(LayerKind::MtpLoss);
        assert_eq!(policy.recompute_cost(&t), t.fwd_cost);
        assert_eq!(policy.recompute_cost(&l), 0.0);
    }

    #[test]
    fn compare_identical_plans_zero_improvement() {
        let (plan, layers) = homogeneous_plan(4);
        let rows = compare_plans(&[plan.clone(), plan], &layers, 8, &SimConfig::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].improvement_vs_baseline, 0.0);
        assert_eq!(rows[1].improvement_vs_baseline, 0.0);
        assert_eq!(rows[0].plan_index, 0); // deterministic tie-break
    }

    #[test]
    fn save_interval_formula() {
        let s = optimal_save_interval(4.0, 5.0).unwrap();
        assert_eq!(s.interval_minutes, 48.0);
        assert_eq!(s.daily_overhead_minutes, 240.0);
    }

    #[test]
    fn save_interval_sqrt_scaling() {
        let base = optimal_save_interval(4.0, 5.0).unwrap();
        let quadrupled = optimal_save_interval(16.0, 5.0).unwrap();
        assert!((quadrupled.interval_minutes - 2.0 * base.interval_minutes).abs() < 1e-12);
    }

    #[test]
    fn overhead_arithmetic() {
        let e = failover_overhead(4.0, 5.0, 10.0, 48.0).unwrap();
        assert_eq!(e, 290.0);
    }

    #[test]
    fn overhead_at_optimum_matches_am_gm_bound() {
        let s = optimal_save_interval(4.0, 5.0).unwrap();
        let e = failover_overhead(4.0, 5.0, 0.0, s.interval_minutes).unwrap();
        assert!((e - s.daily_overhead_minutes).abs() < 1e-9);
        // Convexity: perturbing the interval can only cost more.
        for &factor in &[0.5, 0.9, 1.1, 2.0] {
            let perturbed = failover_overhead(4.0, 5.0, 0.0, s.interval_minutes * factor).unwrap();
            assert!(perturbed >= e);
        }
    }

    #[test]
    fn rejects_non_positive_save_inputs() {
        assert!(optimal_save_interval(0.0, 5.0).is_err());
        assert!(optimal_save_interval(4.0, -1.0).is_err());
        assert!(failover_overhead(4.0, 5.0, 10.0, 0.0).is_err());
    }
}
