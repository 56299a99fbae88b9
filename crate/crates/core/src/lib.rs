//! Desk-scale quantitative machinery for sparse mixture-of-experts training
//! programs.
//!
//! The crate collects the numerical cores that sit behind a large MoE
//! training effort, each small enough to verify exhaustively on a laptop:
//!
//! - [`scaling`] — power-law fitting (Huber loss + BFGS), the unified
//!   efficiency-leverage law, and wind-tunnel experiment planning.
//! - [`wsm`] — checkpoint-merge scheduling: bidirectional conversion between
//!   learning-rate decay coefficients and checkpoint merge weights, weighted
//!   merging, top-N averaging, and an equivalence simulator.
//! - [`router`] — aux-loss-free balanced routing: biased top-k selection with
//!   group routing, sign-centered bias updates, load statistics, routing-map
//!   padding, and a balance-dynamics simulator.
//! - [`fp8`] — a software FP8 E4M3 codec, block quantizer, and the
//!   underflow/distortion audit metrics.
//! - [`pipeline`] — a deterministic event-driven simulator for interleaved
//!   1F1B pipeline parallelism over heterogeneous layers, plus checkpoint
//!   save-interval math.
//! - [`rewards`] — post-training reward and objective math: sentence-level
//!   policy objectives, group advantages, length/format rewards, round-robin
//!   arena scoring, and the pass@k estimator.
//!
//! Everything is a pure function of its inputs. Simulators own a seeded
//! [`rng::Xoshiro256StarStar`] and are bit-reproducible for a fixed seed.
//!
//! The crate is `no_std`-compatible (requires `alloc`); enable the `libm`
//! feature in place of `std` to supply the float math.

#![cfg_attr(not(feature = "std"), no_std)]
#![forbid(unsafe_code)]
// Validation guards use `!(x > 0.0)` so NaN fails closed; the suggested
// `partial_cmp` rewrite would silently admit it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(not(any(feature = "std", feature = "libm")))]
compile_error!("sparse-forge-core requires either the `std` or the `libm` feature");

extern crate alloc;

pub(crate) mod math;

pub mod fp8;
pub mod optim;
pub mod pipeline;
pub mod rewards;
pub mod rng;
pub mod router;
pub mod scaling;
pub mod wsm;
