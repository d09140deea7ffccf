//! Few-shot node classification on graphs via unsupervised meta-training of
//! a context-aware attention network.
//!
//! Start with the runnable examples (`cargo run --release --example <name>`):
//!
//! - `adaptive_features` — structure-aware feature smoothing, gating, fusion
//! - `pseudo_tasks` — unsupervised episode generation with anchor sampling
//! - `anchor_diversity` — closed-form and Monte-Carlo anchor statistics
//! - `gradient_check` — the autodiff engine vs finite differences
//! - `train_toy` — end-to-end meta-training on a two-cluster toy graph
//! - `evaluate` — checkpointed model evaluation with a report
//! - `ablation_sweep` — contribution of each architectural component
//!
//! The same capabilities are scriptable through the thin `vision` binary
//! (`prepare`, `train`, `eval`, `gen-tasks`, `verify-anchors`, `ablate`,
//! `synth`).

pub mod adaptive;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod graph;
pub mod loss;
pub mod mat;
pub mod net;
pub mod optim;
pub mod params;
pub mod synth;
pub mod tasks;
pub mod train;

pub use error::{Error, Result};

/// Deterministic 64-bit mixer used to derive independent RNG streams from a
/// base seed and a stream tag (splitmix64 finalizer).
pub fn mix_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
