//! `payt diagnose`: overlap diagnostics on the propensity fit, per policy
//! year (pooled over cohort frames) or per calendar year with per_year_gps.

use crate::config::RunConfig;
use crate::output::{fmt_f64, CsvWriter};
use crate::pipeline;
use crate::{run_err, CliResult};
use payt_core::overlap::{overlap_report, OverlapReport};
use payt_core::residuals::residualize;

pub fn run(cfg: &RunConfig) -> CliResult {
    let panel = pipeline::load_panel(cfg).map_err(crate::input_err)?;
    let outcome = cfg.outcomes[0];
    let mut rows: Vec<(String, OverlapReport)> = Vec::new();
    for &k in &cfg.policy_years {
        let frames = match payt_core::panel::build_frames(&panel, k, outcome) {
            Ok(f) => f,
            Err(e) => {
                eprintln!("skipping policy year {k}: {e}");
                continue;
            }
        };
        let nuisance = pipeline::nuisance_params(cfg, &panel, &frames[0]).map_err(run_err)?;
        let mut pooled_s = Vec::new();
        let mut pooled_t = Vec::new();
        for frame in &frames {
            let seed = pipeline::frame_seed(cfg, frame);
            let rf = residualize(&panel, frame, &nuisance, &nuisance, seed).map_err(run_err)?;
            if cfg.per_year_gps {
                let report = overlap_report(&rf.s_hat_oob, &frame.treated_flags(), &cfg.overlap)
                    .map_err(run_err)?;
                rows.push((format!("y{k}-c{}", frame.calendar_year), report));
            } else {
                pooled_s.extend_from_slice(&rf.s_hat_oob);
                pooled_t.extend(frame.treated_flags());
            }
        }
        if !cfg.per_year_gps && !pooled_s.is_empty() {
            let report =
                overlap_report(&pooled_s, &pooled_t, &cfg.overlap).map_err(run_err)?;
            rows.push((format!("y{k}"), report));
        }
    }
    if rows.is_empty() {
        return Err(run_err(anyhow::anyhow!("no frames available for diagnostics")));
    }
    let mut writer = CsvWriter::create(
        &cfg.out_dir.join("overlap.csv"),
        &[
            "scope",
            "normalized_diff",
            "coverage_treated",
            "coverage_control",
            "caliper_share_treated",
            "caliper_share_control",
            "n_treated",
            "n_control",
        ],
    )
    .map_err(run_err)?;
    let mut floor_violated = false;
    for (scope, report) in &rows {
        println!("[{scope}]");
        print!("{report}");
        writer
            .row(&[
                scope.clone(),
                fmt_f64(report.normalized_diff),
                fmt_f64(report.coverage_treated),
                fmt_f64(report.coverage_control),
                fmt_f64(report.caliper_share_treated),
                fmt_f64(report.caliper_share_control),
                report.n_treated.to_string(),
                report.n_control.to_string(),
            ])
            .map_err(run_err)?;
        if report.caliper_share_treated < cfg.min_caliper_share
            || report.caliper_share_control < cfg.min_caliper_share
        {
            floor_violated = true;
        }
    }
    writer.finish().map_err(run_err)?;
    if floor_violated {
        return Err(run_err(anyhow::anyhow!(
            "caliper share fell below the configured floor {}",
            cfg.min_caliper_share
        )));
    }
    Ok(())
}
