//! `payt bench`: wall-clock timings of the pipeline stages on the configured
//! data. Timings go to stderr, a summary CSV to the output directory.

use crate::config::RunConfig;
use crate::output::{fmt_f64, CsvWriter};
use crate::pipeline;
use crate::{input_err, run_err, CliResult};
use payt_core::causal::fit_causal;
use payt_core::residuals::residualize;
use std::time::Instant;

pub fn run(cfg: &RunConfig) -> CliResult {
    let mut timings: Vec<(String, f64)> = Vec::new();
    let mut lap = |label: &str, t: Instant| {
        let secs = t.elapsed().as_secs_f64();
        eprintln!("{label}: {secs:.3}s");
        timings.push((label.to_string(), secs));
    };

    let t = Instant::now();
    let panel = pipeline::load_panel(cfg).map_err(input_err)?;
    lap("load_panel", t);

    let outcome = cfg.outcomes[0];
    let k = cfg.policy_years[0];
    let t = Instant::now();
    let frames = payt_core::panel::build_frames(&panel, k, outcome).map_err(run_err)?;
    lap("build_frames", t);

    let frame = &frames[0];
    let nuisance = pipeline::nuisance_params(cfg, &panel, frame).map_err(run_err)?;
    let seed = pipeline::frame_seed(cfg, frame);
    let t = Instant::now();
    let rf = residualize(&panel, frame, &nuisance, &nuisance, seed).map_err(run_err)?;
    lap("residualize", t);

    let x = frame.design(&panel);
    let t = Instant::now();
    let cf = fit_causal(
        &x,
        &rf.y_resid,
        &rf.p_resid,
        &frame.treated_flags(),
        &cfg.causal_forest,
        seed,
    )
    .map_err(run_err)?;
    lap("fit_causal", t);

    let t = Instant::now();
    let capes = cf.cape_rows(&x).map_err(run_err)?;
    lap("cape_queries", t);
    eprintln!("frame: {} units, {} pointwise estimates", frame.n(), capes.len());

    let mut writer = CsvWriter::create(&cfg.out_dir.join("bench.csv"), &["stage", "seconds"])
        .map_err(run_err)?;
    for (label, secs) in &timings {
        writer.row(&[label.clone(), fmt_f64(*secs)]).map_err(run_err)?;
    }
    writer.finish().map_err(run_err)?;
    Ok(())
}
