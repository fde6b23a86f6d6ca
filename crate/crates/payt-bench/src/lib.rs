//! Shared fixtures for the pipeline benchmarks.

use payt_core::dgp::{self, DgpSpec};
use payt_core::panel::{build_frames, EstimationFrame, Outcome, Panel};

/// A single-cohort heterogeneous panel with its first-policy-year frame.
pub fn bench_frame(n_units: usize, d: usize, seed: u64) -> (Panel, EstimationFrame) {
    let spec = DgpSpec::heterogeneous(n_units, d, seed);
    let generated = dgp::generate(&spec).expect("bench spec is valid");
    let frame = build_frames(&generated.panel, 1, Outcome::Uw)
        .expect("bench panel has a first policy year")
        .remove(0);
    (generated.panel, frame)
}
