//! Estimation toolkit for unit-pricing ("pay-as-you-throw") waste policies.
//!
//! The crate covers the full pipeline: panel ingestion and staggered-adoption
//! frame construction, honest subsampled regression forests for the nuisance
//! models, residual-on-residual effect forests with bootstrap-of-little-bags
//! confidence intervals, heterogeneity summaries, overlap diagnostics, cost
//! simulation, a comparative-statics household model, and a two-way fixed
//! effects event-study baseline. A synthetic data generator with a truth
//! manifest backs every estimator with a known ground truth.

pub mod causal;
pub mod costs;
pub mod dgp;
pub mod event_study;
pub mod forest;
pub mod heterogeneity;
pub mod household;
pub mod linalg;
pub mod matrix;
pub mod overlap;
pub mod panel;
pub mod residuals;
pub mod stats;


pub use forest::{Forest, ForestParams};
pub use matrix::Matrix;
pub use panel::{EstimationFrame, Outcome, Panel, PanelRecord, SchemaMap};


use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic per-stream RNG: same `(seed, stream)` always yields the same
/// sequence, independent of thread scheduling.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a sub-seed for a named pipeline stage from the run seed (FNV-1a).
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
