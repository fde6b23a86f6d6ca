//! Minimal end-to-end run on a synthetic panel: generate, residualize, fit
//! the effect forest, and print a few pointwise estimates with intervals.

use payt_core::causal::{fit_causal_frame, CausalForestParams};
use payt_core::dgp::{self, DgpSpec};
use payt_core::forest::ForestParams;
use payt_core::panel::{build_frames, Outcome};
use payt_core::residuals::residualize;

fn main() {
    let spec = DgpSpec::heterogeneous(800, 10, 42);
    let generated = dgp::generate(&spec).expect("spec is valid");
    let frame = build_frames(&generated.panel, 1, Outcome::Uw)
        .expect("panel has adopters")
        .remove(0);

    let nuisance = ForestParams { num_trees: 300, min_leaf_size: 10, ..ForestParams::default() };
    let resid = residualize(&generated.panel, &frame, &nuisance, &nuisance, 7)
        .expect("nuisance fits succeed");

    let params = CausalForestParams {
        forest: ForestParams { num_trees: 500, min_leaf_size: 10, ..ForestParams::default() },
        ..CausalForestParams::default()
    };
    let cf = fit_causal_frame(&resid, &generated.panel, &params, 11).expect("effect fit succeeds");

    let x = frame.design(&generated.panel);
    println!("unit            truth   estimate        95% interval");
    for (i, row) in frame.rows().take(8).enumerate() {
        let truth = generated.manifest[row as usize].delta_uw;
        let est = cf.cape(x.row(i)).expect("query succeeds");
        println!(
            "{:<12} {:>8.2}  {:>9.2}  [{:>7.2}, {:>7.2}]",
            generated.panel.unit_name(generated.panel.records[row as usize].unit),
            truth,
            est.delta_hat,
            est.ci_low,
            est.ci_high
        );
    }
}
