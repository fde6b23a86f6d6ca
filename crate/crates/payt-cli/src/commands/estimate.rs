//! `payt estimate`: the full two-stage pipeline per outcome and policy year.
//!
//! Outputs per (outcome, policy year): `cape_<outcome>_y<k>.csv` with
//! pointwise effects for every frame member, `residuals_<outcome>_y<k>_<year>.csv`
//! audit dumps per cohort frame, and one `ape_summary.csv` across all pairs.

use crate::config::RunConfig;
use crate::output::{fmt_bool, fmt_f64, CsvWriter};
use crate::pipeline;
use crate::{run_err, CliResult};
use payt_core::causal::{estimate_ape, estimate_cate, ApeInput};
use payt_core::panel::DatasetError;
use payt_core::residuals::write_residuals_csv;
use std::time::Instant;

pub fn run(cfg: &RunConfig) -> CliResult {
    let panel = pipeline::load_panel(cfg).map_err(crate::input_err)?;
    let mut ape_rows: Vec<Vec<String>> = Vec::new();
    let mut any_frames = false;
    for &outcome in &cfg.outcomes {
        for &k in &cfg.policy_years {
            let started = Instant::now();
            let frames = match payt_core::panel::build_frames(&panel, k, outcome) {
                Ok(f) => f,
                Err(e @ DatasetError::NoTreatedUnits(_)) => {
                    // surfaced per frame; the remaining pairs still complete
                    eprintln!("skipping {} policy year {k}: {e}", outcome.name());
                    continue;
                }
                Err(e) => return Err(run_err(e)),
            };
            let nuisance =
                pipeline::nuisance_params(cfg, &panel, &frames[0]).map_err(run_err)?;
            let mut estimates = Vec::new();
            for frame in &frames {
                estimates
                    .push(pipeline::estimate_frame(cfg, &panel, frame, &nuisance).map_err(run_err)?);
            }
            any_frames = true;

            let cape_path =
                cfg.out_dir.join(format!("cape_{}_y{k}.csv", outcome.name()));
            let mut writer = CsvWriter::create(
                &cape_path,
                &[
                    "unit_id",
                    "outcome",
                    "policy_year",
                    "delta_hat",
                    "std_err",
                    "ci_low",
                    "ci_high",
                    "significant_05",
                    "calendar_year",
                    "treated",
                    "price",
                    "cate",
                    "cate_suppressed",
                ],
            )
            .map_err(run_err)?;
            for est in &estimates {
                let prices = est.frame.prices(&panel);
                let flags = est.frame.treated_flags();
                for (i, cape) in est.capes.iter().enumerate() {
                    let cate = estimate_cate(cape, prices[i], cfg.significance_filter)
                        .map_err(run_err)?;
                    writer
                        .row(&[
                            cape.unit_id.clone(),
                            est.frame.outcome.name().to_string(),
                            est.frame.policy_year.to_string(),
                            fmt_f64(cape.delta_hat),
                            fmt_f64(cape.std_err),
                            fmt_f64(cape.ci_low),
                            fmt_f64(cape.ci_high),
                            fmt_bool(cape.significant_05),
                            est.frame.calendar_year.to_string(),
                            fmt_bool(flags[i]),
                            fmt_f64(prices[i]),
                            fmt_f64(cate.value),
                            fmt_bool(cate.suppressed),
                        ])
                        .map_err(run_err)?;
                }
                let resid_path = cfg.out_dir.join(format!(
                    "residuals_{}_y{k}_{}.csv",
                    outcome.name(),
                    est.frame.calendar_year
                ));
                write_residuals_csv(&panel, &est.resid, &resid_path).map_err(run_err)?;
            }
            writer.finish().map_err(run_err)?;

            let inputs: Vec<ApeInput<'_>> = estimates
                .iter()
                .map(|e| ApeInput {
                    y_resid: &e.resid.y_resid,
                    p_resid: &e.resid.p_resid,
                    calendar_year: e.frame.calendar_year,
                })
                .collect();
            let ape = estimate_ape(
                &inputs,
                k,
                outcome,
                cfg.ape_bootstrap,
                pipeline::frame_seed(cfg, &estimates[0].frame),
            )
            .map_err(run_err)?;
            ape_rows.push(vec![
                outcome.name().to_string(),
                k.to_string(),
                fmt_f64(ape.ape),
                fmt_f64(ape.std_err),
                ape.n.to_string(),
                estimates.len().to_string(),
            ]);
            eprintln!(
                "estimated {} policy year {k}: {} frame(s), {} units, {:.1}s",
                outcome.name(),
                estimates.len(),
                inputs.iter().map(|i| i.y_resid.len()).sum::<usize>(),
                started.elapsed().as_secs_f64()
            );
        }
    }
    if !any_frames {
        return Err(run_err(anyhow::anyhow!("no (outcome, policy year) pair had treated units")));
    }
    let mut ape_writer = CsvWriter::create(
        &cfg.out_dir.join("ape_summary.csv"),
        &["outcome", "policy_year", "ape", "std_err", "n", "n_frames"],
    )
    .map_err(run_err)?;
    for row in &ape_rows {
        ape_writer.row(row).map_err(run_err)?;
    }
    ape_writer.finish().map_err(run_err)?;
    println!("estimates written to {}", cfg.out_dir.display());
    Ok(())
}
