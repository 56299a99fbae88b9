//! `sparse-forge` — command-line workbench for the quantitative machinery
//! behind a sparse-MoE training program.
//!
//! Subcommands map one-to-one onto the core library: `scaling` (power-law
//! and efficiency-leverage fits, wind-tunnel plans), `wsm` (checkpoint-merge
//! schedules), `router` (balance simulation, routing-map padding), `fp8`
//! (quantization audits), `pipe` (pipeline-parallel simulation), `ops`
//! (checkpoint save-interval math), and `reward` (post-training objective
//! math). Data goes to `--output` files or stdout; diagnostics go to
//! stderr. Exit codes: 0 success, 1 validation error, 2 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sparse_forge::config::{load_config, resolve_seed, OutputFormat, RunConfig};
use sparse_forge::formats;
use sparse_forge::plan::PlanFile;
use sparse_forge::rollout::{LpoReportFile, RolloutFile, SentenceTermFile};
use sparse_forge::{CliError, Result};

use sparse_forge_core::fp8::{self, AuditConfig, BlockLayout};
use sparse_forge_core::pipeline::{
    compare_plans, failover_overhead, optimal_save_interval, simulate_schedule, Phase, SimConfig,
};
use sparse_forge_core::rewards::{
    composite_reward, gar_scores, length_reward, lpo_objective, pass_at_k, ArenaOutcome, LpoConfig,
};
use sparse_forge_core::rng::Xoshiro256StarStar;
use sparse_forge_core::router::{pad_routing_map, simulate_balance, RouterConfig, RoutingMap};
use sparse_forge_core::scaling::{
    fit_el_law, fit_power_law, plan_wind_tunnel, predict_allocation, predict_hparams, PowerLawFit,
    DEFAULT_HUBER_DELTA, DEFAULT_SATURATION,
};
use sparse_forge_core::wsm::{
    decay_to_merge_weights, merge_checkpoints, merge_to_gradient_weights, simulate_equivalence,
    top_n_average, CheckpointSeries, GradientWeights, MergeWeights,
};

#[derive(Parser)]
#[command(
    name = "sparse-forge",
    version,
    about = "Sparse-MoE training math workbench"
)]
struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// PRNG seed (falls back to config, then $SPARSE_FORGE_SEED, then 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Scaling-law fitting, prediction, and wind-tunnel planning.
    Scaling(ScalingCmd),
    /// Checkpoint-merge schedules and merging.
    Wsm(WsmCmd),
    /// Balanced-router simulation and routing-map padding.
    Router(RouterCmd),
    /// FP8 block-quantization audits.
    Fp8(Fp8Cmd),
    /// Pipeline-parallel schedule simulation.
    Pipe(PipeCmd),
    /// Training-operations utilities.
    Ops(OpsCmd),
    /// Post-training reward and objective math.
    Reward(RewardCmd),
}

#[derive(Args)]
struct ScalingCmd {
    #[command(subcommand)]
    action: ScalingAction,
}

#[derive(Subcommand)]
enum ScalingAction {
    /// Fit y = coefficient * C^exponent to `compute,value` CSV points.
    FitPower {
        #[arg(long)]
        input: PathBuf,
        /// Huber threshold on log residuals.
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit the efficiency-leverage law to
    /// `compute,activation_ratio,granularity,observed` CSV points.
    FitEl {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        delta: Option<f64>,
        /// Saturation constant of the activation-ratio transform.
        #[arg(long)]
        saturation: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate fitted laws at a compute budget.
    Predict {
        #[arg(long)]
        compute: f64,
        /// Fit JSON for the learning-rate law (from fit-power).
        #[arg(long)]
        lr_fit: Option<PathBuf>,
        /// Fit JSON for the batch-size law.
        #[arg(long)]
        bs_fit: Option<PathBuf>,
        /// Fit JSON for FLOPs-per-token vs compute.
        #[arg(long)]
        m_fit: Option<PathBuf>,
        /// Fit JSON for tokens vs compute.
        #[arg(long)]
        d_fit: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Plan a geometric ladder of scaling experiments.
    WindTunnel {
        #[arg(long)]
        min_flops_per_token: f64,
        #[arg(long)]
        max_flops_per_token: f64,
        #[arg(long)]
        n_models: usize,
        #[arg(long)]
        lr_fit: PathBuf,
        #[arg(long)]
        bs_fit: PathBuf,
        #[arg(long)]
        m_fit: PathBuf,
        #[arg(long)]
        d_fit: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct WsmCmd {
    #[command(subcommand)]
    action: WsmAction,
}

#[derive(Subcommand)]
enum WsmAction {
    /// Convert between decay coefficients (w) and merge weights (c).
    Convert {
        /// Inline decay schedule `w1,w2,...` (monotone non-increasing).
        #[arg(long, conflicts_with_all = ["c", "input"])]
        w: Option<String>,
        /// Inline merge weights `c0,c1,...` (non-negative, sum 1).
        #[arg(long, conflicts_with = "input")]
        c: Option<String>,
        /// One-row CSV file to convert instead of an inline list.
        #[arg(long, requires = "direction")]
        input: Option<PathBuf>,
        /// Conversion direction for --input: w2c or c2w.
        #[arg(long)]
        direction: Option<String>,
        /// Output as `json` (default) or a one-row `csv`.
        #[arg(long)]
        format: Option<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Merge checkpoint files under explicit weights or top-N selection.
    Merge {
        /// Comma-separated checkpoint paths, oldest first.
        #[arg(long)]
        checkpoints: String,
        /// Merge weights, one per checkpoint.
        #[arg(long, conflicts_with_all = ["scores", "top_n"])]
        weights: Option<String>,
        /// Validation scores, one per checkpoint (with --top-n).
        #[arg(long, requires = "top_n")]
        scores: Option<String>,
        /// Uniformly average the N best-scoring checkpoints.
        #[arg(long)]
        top_n: Option<usize>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Check merge-vs-decayed-update equivalence on random gradients.
    Simulate {
        /// Decay schedule `w1,w2,...`; its length sets the step count.
        #[arg(long)]
        w: String,
        /// Parameter dimension.
        #[arg(long, default_value_t = 1000)]
        dim: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RouterCmd {
    #[command(subcommand)]
    action: RouterAction,
}

#[derive(Subcommand)]
enum RouterAction {
    /// Run the balance loop and emit per-step load statistics as CSV.
    Simulate {
        #[arg(long, default_value_t = 200)]
        steps: usize,
        #[arg(long, default_value_t = 4096)]
        tokens_per_step: usize,
        /// Score offset of the hot expert.
        #[arg(long, default_value_t = 0.0)]
        skew: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Pad expert token counts to an alignment boundary inside the
    /// zero-probability region of a routing map.
    Pad {
        /// Routing map JSON: {"probs": [[...]], "selected": [[...]]}.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        alignment: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Fp8Cmd {
    #[command(subcommand)]
    action: Fp8Action,
}

#[derive(Subcommand)]
enum Fp8Action {
    /// Quantize tensors and report underflow/distortion health per layer.
    Audit {
        /// Comma-separated FP8T tensor paths; layer names from file stems.
        #[arg(long)]
        inputs: String,
        #[arg(long)]
        underflow_threshold: Option<f64>,
        #[arg(long)]
        distortion_threshold: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Quantize-dequantize one tensor and report the reconstruction error.
    Roundtrip {
        #[arg(long)]
        input: PathBuf,
        /// Optionally write the reconstructed tensor here.
        #[arg(long)]
        reconstructed: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PipeCmd {
    #[command(subcommand)]
    action: PipeAction,
}

#[derive(Subcommand)]
enum PipeAction {
    /// Simulate one partition plan.
    Simulate {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        micro_batches: usize,
        #[arg(long)]
        comm_latency: Option<f64>,
        /// Write the event stream CSV here (for Gantt rendering).
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Simulate several plans and rank them.
    Compare {
        /// Comma-separated plan JSON paths; the first is the baseline.
        #[arg(long)]
        plans: String,
        #[arg(long)]
        micro_batches: usize,
        #[arg(long)]
        comm_latency: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OpsCmd {
    #[command(subcommand)]
    action: OpsAction,
}

#[derive(Subcommand)]
enum OpsAction {
    /// Optimal checkpoint save interval for a given failure rate.
    SaveInterval {
        /// Minutes per checkpoint save.
        #[arg(long)]
        save_cost: f64,
        /// Failover events per day.
        #[arg(long)]
        failures: f64,
        /// Minutes lost per failover (adds the constant recovery term).
        #[arg(long)]
        failover_cost: Option<f64>,
        /// Evaluate the daily overhead at this interval instead of the optimum.
        #[arg(long)]
        interval: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RewardCmd {
    #[command(subcommand)]
    action: RewardAction,
}

#[derive(Subcommand)]
enum RewardAction {
    /// Sentence-level clipped objective over a rollout group.
    Lpo {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Round-robin arena scores from judged pair outcomes.
    Gar {
        /// CSV `i,j,result` with result from i's perspective.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Group length-preference reward for one response.
    Length {
        /// Comma-separated response lengths.
        #[arg(long)]
        lengths: String,
        /// Which response to score.
        #[arg(long)]
        index: usize,
        /// Whether the response is correct.
        #[arg(long)]
        correct: bool,
        #[arg(long)]
        alpha: Option<f64>,
        /// Also compose the full reward (correctness + length + format).
        #[arg(long)]
        think_marker: bool,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Unbiased pass@k estimate from n samples with c correct.
    PassAtK {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        c: u64,
        #[arg(long)]
        k: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // Usage and diagnostics belong on the error stream.
            eprint!("{e}");
            return ExitCode::from(code as u8);
        }
    };

    let config = match cli.config.as_deref().map(load_config).transpose() {
        Ok(cfg) => cfg.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let seed = resolve_seed(cli.seed, &config);

    match dispatch(cli.command, &config, seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command, config: &RunConfig, seed: u64) -> Result<()> {
    match command {
        Command::Scaling(cmd) => run_scaling(cmd.action, config),
        Command::Wsm(cmd) => run_wsm(cmd.action, config, seed),
        Command::Router(cmd) => run_router(cmd.action, config, seed),
        Command::Fp8(cmd) => run_fp8(cmd.action, config),
        Command::Pipe(cmd) => run_pipe(cmd.action, config),
        Command::Ops(cmd) => run_ops(cmd.action),
        Command::Reward(cmd) => run_reward(cmd.action, config),
    }
}

fn emit_json<T: Serialize>(output: Option<&Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Validation(format!("serializing report: {e}")))?;
    text.push('\n');
    formats::emit(output, &text)
}

fn parse_f64_list(raw: &str, what: &str) -> Result<Vec<f64>> {
    raw.split(',')
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|e| CliError::Validation(format!("{what}: cannot parse `{f}`: {e}")))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// scaling

#[derive(Serialize, serde::Deserialize)]
struct FitReport {
    coefficient: f64,
    exponent: f64,
    residual: f64,
}

impl From<PowerLawFit> for FitReport {
    fn from(fit: PowerLawFit) -> Self {
        Self {
            coefficient: fit.coefficient,
            exponent: fit.exponent,
            residual: fit.residual,
        }
    }
}

fn load_fit(path: &Path) -> Result<PowerLawFit> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
    let report: FitReport = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok(PowerLawFit {
        coefficient: report.coefficient,
        exponent: report.exponent,
        residual: report.residual,
    })
}

fn run_scaling(action: ScalingAction, config: &RunConfig) -> Result<()> {
    let section = config.scaling.as_ref();
    let default_delta = section.and_then(|s| s.delta).unwrap_or(DEFAULT_HUBER_DELTA);
    let default_saturation = section
        .and_then(|s| s.saturation)
        .unwrap_or(DEFAULT_SATURATION);
    match action {
        ScalingAction::FitPower {
            input,
            delta,
            output,
        } => {
            let points = formats::read_power_points(&input)?;
            let fit = fit_power_law(&points, delta.unwrap_or(default_delta))
                .map_err(CliError::validation)?;
            emit_json(output.as_deref(), &FitReport::from(fit))
        }
        ScalingAction::FitEl {
            input,
            delta,
            saturation,
            output,
        } => {
            let points = formats::read_arch_points(&input)?;
            let fit = fit_el_law(
                &points,
                delta.unwrap_or(default_delta),
                saturation.unwrap_or(default_saturation),
            )
            .map_err(CliError::validation)?;
            #[derive(Serialize)]
            struct ElReport {
                a: f64,
                d: f64,
                beta: f64,
                gamma: f64,
                saturation: f64,
                residual: f64,
            }
            emit_json(
                output.as_deref(),
                &ElReport {
                    a: fit.params.a,
                    d: fit.params.d,
                    beta: fit.params.beta,
                    gamma: fit.params.gamma,
                    saturation: fit.params.saturation,
                    residual: fit.residual,
                },
            )
        }
        ScalingAction::Predict {
            compute,
            lr_fit,
            bs_fit,
            m_fit,
            d_fit,
            output,
        } => {
            #[derive(Serialize)]
            struct PredictReport {
                compute: f64,
                #[serde(skip_serializing_if = "Option::is_none")]
                learning_rate: Option<f64>,
                #[serde(skip_serializing_if = "Option::is_none")]
                batch_size: Option<u64>,
                #[serde(skip_serializing_if = "Option::is_none")]
                flops_per_token: Option<f64>,
                #[serde(skip_serializing_if = "Option::is_none")]
                train_tokens: Option<f64>,
                #[serde(skip_serializing_if = "Option::is_none")]
                allocation_adjusted: Option<bool>,
            }
            let mut report = PredictReport {
                compute,
                learning_rate: None,
                batch_size: None,
                flops_per_token: None,
                train_tokens: None,
                allocation_adjusted: None,
            };
            match (lr_fit, bs_fit) {
                (Some(lr), Some(bs)) => {
                    let (eta, batch) = predict_hparams(&load_fit(&lr)?, &load_fit(&bs)?, compute)
                        .map_err(CliError::validation)?;
                    report.learning_rate = Some(eta);
                    report.batch_size = Some(batch);
                }
                (None, None) => {}
                _ => {
                    return Err(CliError::Validation(String::from(
                        "--lr-fit and --bs-fit must be given together",
                    )))
                }
            }
            match (m_fit, d_fit) {
                (Some(m), Some(d)) => {
                    let allocation = predict_allocation(&load_fit(&m)?, &load_fit(&d)?, compute)
                        .map_err(CliError::validation)?;
                    report.flops_per_token = Some(allocation.flops_per_token);
                    report.train_tokens = Some(allocation.tokens);
                    report.allocation_adjusted = Some(allocation.adjusted);
                }
                (None, None) => {}
                _ => {
                    return Err(CliError::Validation(String::from(
                        "--m-fit and --d-fit must be given together",
                    )))
                }
            }
            if report.learning_rate.is_none() && report.flops_per_token.is_none() {
                return Err(CliError::Validation(String::from(
                    "nothing to predict: pass --lr-fit/--bs-fit and/or --m-fit/--d-fit",
                )));
            }
            emit_json(output.as_deref(), &report)
        }
        ScalingAction::WindTunnel {
            min_flops_per_token,
            max_flops_per_token,
            n_models,
            lr_fit,
            bs_fit,
            m_fit,
            d_fit,
            output,
        } => {
            let plan = plan_wind_tunnel(
                min_flops_per_token,
                max_flops_per_token,
                n_models,
                &load_fit(&lr_fit)?,
                &load_fit(&bs_fit)?,
                &load_fit(&m_fit)?,
                &load_fit(&d_fit)?,
            )
            .map_err(CliError::validation)?;
            let mut csv = String::from(
                "flops_per_token,train_tokens,learning_rate,batch_size,total_compute\n",
            );
            for e in &plan.entries {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    e.flops_per_token,
                    e.train_tokens,
                    e.learning_rate,
                    e.batch_size,
                    e.total_compute
                ));
            }
            formats::emit(output.as_deref(), &csv)
        }
    }
}

// ---------------------------------------------------------------------------
// wsm

fn run_wsm(action: WsmAction, config: &RunConfig, seed: u64) -> Result<()> {
    match action {
        WsmAction::Convert {
            w,
            c,
            input,
            direction,
            format,
            output,
        } => {
            let format = format.or(match config.format {
                Some(OutputFormat::Csv) => Some(String::from("csv")),
                Some(OutputFormat::Json) => Some(String::from("json")),
                None => None,
            });
            let (values, to_merge) = match (&w, &c, &input) {
                (Some(raw), None, None) => (parse_f64_list(raw, "--w")?, true),
                (None, Some(raw), None) => (parse_f64_list(raw, "--c")?, false),
                (None, None, Some(path)) => {
                    let direction = direction.as_deref().unwrap_or("w2c");
                    let row = formats::read_schedule_row(path)?;
                    match direction {
                        "w2c" => (row, true),
                        "c2w" => (row, false),
                        other => {
                            return Err(CliError::Validation(format!(
                                "--direction must be w2c or c2w, found `{other}`"
                            )))
                        }
                    }
                }
                _ => {
                    return Err(CliError::Validation(String::from(
                        "pass exactly one of --w, --c, or --input",
                    )))
                }
            };
            let (label, converted) = if to_merge {
                let weights = GradientWeights::new(values).map_err(CliError::validation)?;
                let merged = decay_to_merge_weights(&weights).map_err(CliError::validation)?;
                ("c", merged.values().to_vec())
            } else {
                let weights = MergeWeights::new(values).map_err(CliError::validation)?;
                let decay = merge_to_gradient_weights(&weights).map_err(CliError::validation)?;
                ("w", decay.values().to_vec())
            };
            match format.as_deref() {
                None | Some("json") => {
                    let mut map = serde_json::Map::new();
                    map.insert(
                        label.to_string(),
                        serde_json::to_value(&converted)
                            .map_err(|e| CliError::Validation(e.to_string()))?,
                    );
                    emit_json(output.as_deref(), &map)
                }
                Some("csv") => {
                    let row = converted
                        .iter()
                        .map(f64::to_string)
                        .collect::<Vec<_>>()
                        .join(",");
                    formats::emit(output.as_deref(), &format!("{row}\n"))
                }
                Some(other) => Err(CliError::Validation(format!(
                    "--format must be json or csv, found `{other}`"
                ))),
            }
        }
        WsmAction::Merge {
            checkpoints,
            weights,
            scores,
            top_n,
            output,
        } => {
            let paths: Vec<&str> = checkpoints.split(',').collect();
            let vectors: Vec<Vec<f64>> = paths
                .iter()
                .map(|p| formats::read_checkpoint(Path::new(p)))
                .collect::<Result<_>>()?;
            let merged = match (weights, top_n) {
                (Some(raw), None) => {
                    let weights = MergeWeights::new(parse_f64_list(&raw, "--weights")?)
                        .map_err(CliError::validation)?;
                    let series = CheckpointSeries::new(0, vectors).map_err(CliError::validation)?;
                    merge_checkpoints(&series, &weights).map_err(CliError::validation)?
                }
                (None, Some(n)) => {
                    let raw = scores.ok_or_else(|| {
                        CliError::Validation(String::from("--top-n requires --scores"))
                    })?;
                    let scores = parse_f64_list(&raw, "--scores")?;
                    if scores.len() != vectors.len() {
                        return Err(CliError::Validation(format!(
                            "{} scores for {} checkpoints",
                            scores.len(),
                            vectors.len()
                        )));
                    }
                    let scored: Vec<(Vec<f64>, f64)> = vectors.into_iter().zip(scores).collect();
                    top_n_average(&scored, n).map_err(CliError::validation)?
                }
                _ => {
                    return Err(CliError::Validation(String::from(
                        "pass exactly one of --weights or --top-n with --scores",
                    )))
                }
            };
            formats::write_checkpoint(&output, &merged)?;
            #[derive(Serialize)]
            struct MergeReport {
                output: String,
                dimension: usize,
            }
            emit_json(
                None,
                &MergeReport {
                    output: output.display().to_string(),
                    dimension: merged.len(),
                },
            )
        }
        WsmAction::Simulate { w, dim, output } => {
            let weights =
                GradientWeights::new(parse_f64_list(&w, "--w")?).map_err(CliError::validation)?;
            let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
            let theta: Vec<f64> = (0..dim).map(|_| rng.next_gaussian()).collect();
            let gradients: Vec<Vec<f64>> = (0..weights.len())
                .map(|_| (0..dim).map(|_| 0.01 * rng.next_gaussian()).collect())
                .collect();
            let report =
                simulate_equivalence(&gradients, &theta, &weights).map_err(CliError::validation)?;
            #[derive(Serialize)]
            struct EquivalenceFile {
                steps: usize,
                dimension: usize,
                max_abs_diff: f64,
            }
            emit_json(
                output.as_deref(),
                &EquivalenceFile {
                    steps: weights.len(),
                    dimension: dim,
                    max_abs_diff: report.max_abs_diff,
                },
            )
        }
    }
}

// ---------------------------------------------------------------------------
// router

#[derive(Serialize, serde::Deserialize)]
struct RoutingMapFile {
    probs: Vec<Vec<f64>>,
    #[serde(default)]
    selected: Option<Vec<Vec<u8>>>,
}

fn run_router(action: RouterAction, config: &RunConfig, seed: u64) -> Result<()> {
    let router_cfg = config
        .router
        .as_ref()
        .map(|s| s.apply(RouterConfig::default()))
        .unwrap_or_default();
    match action {
        RouterAction::Simulate {
            steps,
            tokens_per_step,
            skew,
            output,
        } => {
            let series = simulate_balance(&router_cfg, steps, tokens_per_step, skew, seed)
                .map_err(CliError::validation)?;
            let mut csv = String::from("step,max_violation_ratio,mean_count,max_count,min_count\n");
            for (i, stats) in series.iter().enumerate() {
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    i + 1,
                    stats.max_violation_ratio(),
                    stats.mean_count(),
                    stats.max_count(),
                    stats.min_count()
                ));
            }
            formats::emit(output.as_deref(), &csv)
        }
        RouterAction::Pad {
            input,
            alignment,
            output,
        } => {
            let text = std::fs::read_to_string(&input)
                .map_err(|e| CliError::io(&format!("reading {}", input.display()), e))?;
            let file: RoutingMapFile = serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", input.display())))?;
            let tokens = file.probs.len();
            let experts = file.probs.first().map_or(0, Vec::len);
            let mut probs = Vec::with_capacity(tokens * experts);
            for (t, row) in file.probs.iter().enumerate() {
                if row.len() != experts {
                    return Err(CliError::Validation(format!(
                        "probs row {t} has {} entries, expected {experts}",
                        row.len()
                    )));
                }
                probs.extend_from_slice(row);
            }
            let selected: Vec<bool> = match &file.selected {
                Some(rows) => {
                    let mut flat = Vec::with_capacity(tokens * experts);
                    for (t, row) in rows.iter().enumerate() {
                        if row.len() != experts {
                            return Err(CliError::Validation(format!(
                                "selected row {t} has {} entries, expected {experts}",
                                row.len()
                            )));
                        }
                        flat.extend(row.iter().map(|&v| v != 0));
                    }
                    flat
                }
                None => probs.iter().map(|&p| p > 0.0).collect(),
            };
            let map =
                RoutingMap::new(tokens, experts, selected, probs).map_err(CliError::validation)?;
            let padded = pad_routing_map(&map, alignment.unwrap_or(router_cfg.alignment))
                .map_err(CliError::validation)?;
            let out = RoutingMapFile {
                probs: (0..tokens)
                    .map(|t| (0..experts).map(|e| padded.prob(t, e)).collect())
                    .collect(),
                selected: Some(
                    (0..tokens)
                        .map(|t| {
                            (0..experts)
                                .map(|e| u8::from(padded.is_selected(t, e)))
                                .collect()
                        })
                        .collect(),
                ),
            };
            emit_json(output.as_deref(), &out)
        }
    }
}

// ---------------------------------------------------------------------------
// fp8

fn run_fp8(action: Fp8Action, config: &RunConfig) -> Result<()> {
    let mut audit_cfg = AuditConfig::default();
    if let Some(section) = &config.fp8 {
        if let Some(u) = section.underflow_threshold {
            audit_cfg.underflow_threshold = u;
        }
        if let Some(d) = section.distortion_threshold {
            audit_cfg.distortion_threshold = d;
        }
    }
    match action {
        Fp8Action::Audit {
            inputs,
            underflow_threshold,
            distortion_threshold,
            output,
        } => {
            if let Some(u) = underflow_threshold {
                audit_cfg.underflow_threshold = u;
            }
            if let Some(d) = distortion_threshold {
                audit_cfg.distortion_threshold = d;
            }
            let mut layers = Vec::new();
            for raw in inputs.split(',') {
                let path = Path::new(raw.trim());
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| raw.trim().to_string());
                let (matrix, layout) = formats::read_tensor(path)?;
                layers.push((name, matrix, layout));
            }
            let reports = fp8::audit(&layers, &audit_cfg);
            let mut csv = String::from("layer,underflow_rate,distortion,flag\n");
            for (layer, report) in layers.iter().map(|l| &l.0).zip(&reports) {
                match report {
                    Ok(r) => {
                        let flag = match (r.underflow_flagged, r.distortion_flagged) {
                            (false, false) => "",
                            (true, false) => "underflow",
                            (false, true) => "distortion",
                            (true, true) => "underflow+distortion",
                        };
                        csv.push_str(&format!(
                            "{layer},{},{},{flag}\n",
                            r.underflow_rate, r.distortion
                        ));
                    }
                    Err(e) => {
                        eprintln!("layer {layer}: {e}");
                        csv.push_str(&format!("{layer},,,error\n"));
                    }
                }
            }
            formats::emit(output.as_deref(), &csv)
        }
        Fp8Action::Roundtrip {
            input,
            reconstructed,
            output,
        } => {
            let (matrix, layout) = formats::read_tensor(&input)?;
            let q = fp8::quantize(&matrix, layout).map_err(CliError::validation)?;
            let back = fp8::dequantize(&q);
            let underflow = fp8::underflow_rate(&matrix, &q).map_err(CliError::validation)?;
            let dist = fp8::distortion(&matrix, &q).map_err(CliError::validation)?;
            let max_abs_error = matrix
                .data
                .iter()
                .zip(&back.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            if let Some(path) = reconstructed {
                formats::write_tensor(&path, &back, layout)?;
            }
            #[derive(Serialize)]
            struct RoundtripReport {
                rows: usize,
                cols: usize,
                layout: &'static str,
                underflow_rate: f64,
                distortion: f64,
                max_abs_error: f64,
            }
            emit_json(
                output.as_deref(),
                &RoundtripReport {
                    rows: matrix.rows,
                    cols: matrix.cols,
                    layout: match layout {
                        BlockLayout::ActGrad => "act_grad",
                        BlockLayout::Weight => "weight",
                    },
                    underflow_rate: underflow,
                    distortion: dist,
                    max_abs_error,
                },
            )
        }
    }
}

// ---------------------------------------------------------------------------
// pipe

fn sim_config(config: &RunConfig, comm_latency: Option<f64>) -> SimConfig {
    let mut sim = SimConfig::default();
    if let Some(section) = &config.pipe {
        if let Some(v) = section.comm_latency {
            sim.comm_latency = v;
        }
        if let Some(v) = section.tick_resolution {
            sim.tick_resolution = v;
        }
        if let Some(v) = section.recompute_memory_fraction {
            sim.recompute_memory_fraction = v;
        }
        sim.memory_limit = section.memory_limit;
    }
    if let Some(v) = comm_latency {
        sim.comm_latency = v;
    }
    sim
}

fn load_plan(path: &Path) -> Result<PlanFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(&format!("reading {}", path.display()), e))?;
    PlanFile::parse(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn run_pipe(action: PipeAction, config: &RunConfig) -> Result<()> {
    match action {
        PipeAction::Simulate {
            plan,
            micro_batches,
            comm_latency,
            events,
            output,
        } => {
            let sim = sim_config(config, comm_latency);
            let (partition, layers) = load_plan(&plan)?.build()?;
            let (result, event_stream) =
                simulate_schedule(&partition, &layers, micro_batches, &sim)
                    .map_err(CliError::validation)?;
            if let Some(path) = events {
                let mut csv = String::from("rank,start,end,micro_batch,chunk,phase\n");
                for e in &event_stream {
                    csv.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        e.rank,
                        e.start,
                        e.end,
                        e.micro_batch,
                        e.chunk,
                        match e.phase {
                            Phase::Forward => "forward",
                            Phase::Backward => "backward",
                        }
                    ));
                }
                formats::emit(Some(&path), &csv)?;
            }
            #[derive(Serialize)]
            struct Summary {
                makespan_ticks: u64,
                makespan: f64,
                bubble_max: f64,
                bubble_mean: f64,
                bubble_per_rank: Vec<f64>,
                busy_ticks: Vec<u64>,
                peak_memory_per_rank: Vec<f64>,
                over_memory_limit: Vec<usize>,
            }
            emit_json(
                output.as_deref(),
                &Summary {
                    makespan_ticks: result.makespan,
                    makespan: result.makespan as f64 / sim.tick_resolution as f64,
                    bubble_max: result.bubble_max,
                    bubble_mean: result.bubble_mean,
                    bubble_per_rank: result.bubble_ratio.clone(),
                    busy_ticks: result.busy.clone(),
                    peak_memory_per_rank: result.peak_memory.clone(),
                    over_memory_limit: result.over_memory_limit.clone(),
                },
            )
        }
        PipeAction::Compare {
            plans,
            micro_batches,
            comm_latency,
            output,
        } => {
            let sim = sim_config(config, comm_latency);
            let paths: Vec<&str> = plans.split(',').collect();
            let mut partitions = Vec::new();
            let mut layer_lists = Vec::new();
            for raw in &paths {
                let (partition, layers) = load_plan(Path::new(raw.trim()))?.build()?;
                partitions.push(partition);
                layer_lists.push(layers);
            }
            // All plans must describe the same model.
            for (i, layers) in layer_lists.iter().enumerate().skip(1) {
                if layers != &layer_lists[0] {
                    return Err(CliError::Validation(format!(
                        "plan {} describes a different layer list than the baseline",
                        paths[i]
                    )));
                }
            }
            let rows = compare_plans(&partitions, &layer_lists[0], micro_batches, &sim)
                .map_err(CliError::validation)?;
            #[derive(Serialize)]
            struct CompareRow {
                rank: usize,
                plan: String,
                makespan_ticks: u64,
                bubble_max: f64,
                peak_memory_max: f64,
                improvement_vs_baseline: f64,
            }
            let report: Vec<CompareRow> = rows
                .iter()
                .enumerate()
                .map(|(i, row)| CompareRow {
                    rank: i,
                    plan: paths[row.plan_index].trim().to_string(),
                    makespan_ticks: row.makespan,
                    bubble_max: row.bubble_max,
                    peak_memory_max: row.peak_memory_max,
                    improvement_vs_baseline: row.improvement_vs_baseline,
                })
                .collect();
            emit_json(output.as_deref(), &report)
        }
    }
}

// ---------------------------------------------------------------------------
// ops

fn run_ops(action: OpsAction) -> Result<()> {
    match action {
        OpsAction::SaveInterval {
            save_cost,
            failures,
            failover_cost,
            interval,
            output,
        } => {
            let optimum =
                optimal_save_interval(save_cost, failures).map_err(CliError::validation)?;
            let evaluated_at = interval.unwrap_or(optimum.interval_minutes);
            let total = failover_overhead(
                save_cost,
                failures,
                failover_cost.unwrap_or(0.0),
                evaluated_at,
            )
            .map_err(CliError::validation)?;
            #[derive(Serialize)]
            struct SaveIntervalReport {
                interval_minutes: f64,
                daily_overhead_minutes: f64,
                evaluated_interval_minutes: f64,
                total_daily_overhead_minutes: f64,
            }
            emit_json(
                output.as_deref(),
                &SaveIntervalReport {
                    interval_minutes: optimum.interval_minutes,
                    daily_overhead_minutes: optimum.daily_overhead_minutes,
                    evaluated_interval_minutes: evaluated_at,
                    total_daily_overhead_minutes: total,
                },
            )
        }
    }
}

// ---------------------------------------------------------------------------
// reward

fn run_reward(action: RewardAction, config: &RunConfig) -> Result<()> {
    let section = config.reward.as_ref();
    match action {
        RewardAction::Lpo {
            input,
            epsilon,
            output,
        } => {
            let text = std::fs::read_to_string(&input)
                .map_err(|e| CliError::io(&format!("reading {}", input.display()), e))?;
            let group = RolloutFile::parse(&text)?.build()?;
            let eps = epsilon
                .or(section.and_then(|s| s.epsilon))
                .unwrap_or(LpoConfig::default().epsilon);
            let report =
                lpo_objective(&group, &LpoConfig { epsilon: eps }).map_err(CliError::validation)?;
            let file = LpoReportFile {
                objective: report.objective,
                advantages: report.advantages.clone(),
                per_sentence: report
                    .per_sentence
                    .iter()
                    .map(|t| SentenceTermFile {
                        response: t.response,
                        span: (t.span.start, t.span.end),
                        ratio: t.ratio,
                        clipped: t.clipped,
                    })
                    .collect(),
            };
            emit_json(output.as_deref(), &file)
        }
        RewardAction::Gar { input, output } => {
            let rows = formats::read_arena_csv(&input)?;
            let group_size = rows
                .iter()
                .map(|&(i, j, _)| i.max(j) + 1)
                .max()
                .ok_or_else(|| CliError::Validation(String::from("arena CSV has no rows")))?;
            let mut outcome = ArenaOutcome::empty(group_size);
            for (i, j, result) in rows {
                if i == j {
                    return Err(CliError::Validation(format!(
                        "arena row pits response {i} against itself"
                    )));
                }
                outcome.record(i, j, result);
            }
            let scores = gar_scores(&outcome).map_err(CliError::validation)?;
            #[derive(Serialize)]
            struct GarReport {
                group_size: usize,
                scores: Vec<f64>,
            }
            emit_json(output.as_deref(), &GarReport { group_size, scores })
        }
        RewardAction::Length {
            lengths,
            index,
            correct,
            alpha,
            think_marker,
            output,
        } => {
            let lengths: Vec<usize> = lengths
                .split(',')
                .map(|f| {
                    f.trim().parse::<usize>().map_err(|e| {
                        CliError::Validation(format!("--lengths: cannot parse `{f}`: {e}"))
                    })
                })
                .collect::<Result<_>>()?;
            let alpha = alpha.or(section.and_then(|s| s.alpha)).unwrap_or(1.0);
            let reward =
                length_reward(&lengths, index, correct, alpha).map_err(CliError::validation)?;
            let breakdown = composite_reward(correct, &lengths, index, alpha, think_marker, &[])
                .map_err(CliError::validation)?;
            #[derive(Serialize)]
            struct LengthReport {
                length_reward: f64,
                correctness: f64,
                format: f64,
                total: f64,
            }
            emit_json(
                output.as_deref(),
                &LengthReport {
                    length_reward: reward,
                    correctness: breakdown.correctness,
                    format: breakdown.format,
                    total: breakdown.total,
                },
            )
        }
        RewardAction::PassAtK { n, c, k, output } => {
            let estimate = pass_at_k(n, c, k).map_err(CliError::validation)?;
            #[derive(Serialize)]
            struct PassReport {
                n: u64,
                c: u64,
                k: u64,
                pass_at_k: f64,
            }
            emit_json(
                output.as_deref(),
                &PassReport {
                    n,
                    c,
                    k,
                    pass_at_k: estimate,
                },
            )
        }
    }
}
