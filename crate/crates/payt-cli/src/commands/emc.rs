//! `payt emc`: per-unit policy effects on municipal costs. Re-runs the
//! two-stage pipeline for the unsorted and recycling streams (the shared
//! seed derivation makes this byte-consistent with `payt estimate`), fits the
//! unit-cost policy model, and applies the cost decomposition.

use crate::config::RunConfig;
use crate::output::{fmt_bool, fmt_f64, CsvWriter};
use crate::pipeline;
use crate::{input_err, run_err, CliResult};
use payt_core::costs::{
    predict_unit_costs_under_payt, simulate_all, summarize_emc, SimulationInputs,
};
use payt_core::panel::{build_frames, DatasetError, Outcome};

pub fn run(cfg: &RunConfig, all_units: bool) -> CliResult {
    let panel = pipeline::load_panel(cfg).map_err(input_err)?;
    let mut summary_writer = CsvWriter::create(
        &cfg.out_dir.join("emc_summary.csv"),
        &[
            "policy_year",
            "component",
            "mean",
            "sd",
            "share_positive",
            "n",
        ],
    )
    .map_err(run_err)?;
    let mut wrote_any = false;
    for &k in &cfg.policy_years {
        let frames_uw = match build_frames(&panel, k, Outcome::Uw) {
            Ok(f) => f,
            Err(e @ DatasetError::NoTreatedUnits(_)) => {
                eprintln!("skipping policy year {k}: {e}");
                continue;
            }
            Err(e) => return Err(run_err(e)),
        };
        let nuisance = pipeline::nuisance_params(cfg, &panel, &frames_uw[0]).map_err(run_err)?;
        let mut detail_writer = CsvWriter::create(
            &cfg.out_dir.join(format!("emc_detail_y{k}.csv")),
            &[
                "unit_id",
                "policy_year",
                "treated",
                "private_emc",
                "external_emc",
                "total_emc",
                "cate_uw",
                "cate_rw",
                "pc_uw",
                "pc_rw",
                "price_used",
            ],
        )
        .map_err(run_err)?;
        let mut all_results = Vec::new();
        for frame_uw in &frames_uw {
            let frame_rw = payt_core::panel::build_frame(
                &panel,
                k,
                frame_uw.calendar_year,
                Outcome::Rw,
            )
            .map_err(run_err)?;
            let est_uw =
                pipeline::estimate_frame(cfg, &panel, frame_uw, &nuisance).map_err(run_err)?;
            let est_rw =
                pipeline::estimate_frame(cfg, &panel, &frame_rw, &nuisance).map_err(run_err)?;
            let cost_preds = predict_unit_costs_under_payt(
                &panel,
                frame_uw,
                &nuisance,
                &cfg.causal_forest,
                &cfg.costs,
                pipeline::frame_seed(cfg, frame_uw),
            )
            .map_err(run_err)?;
            let treated = frame_uw.treated_flags();
            let prices = frame_uw.prices(&panel);
            let unit_ids: Vec<String> =
                frame_uw.unit_names(&panel).map(str::to_string).collect();
            let pc_uw: Vec<f64> = cost_preds.iter().map(|p| p.pc_uw_hat).collect();
            let pc_rw: Vec<f64> = cost_preds.iter().map(|p| p.pc_rw_hat).collect();
            let inputs = SimulationInputs {
                unit_ids: &unit_ids,
                policy_year: k,
                treated: &treated,
                prices: &prices,
                s_hat: &est_uw.resid.s_hat_oob,
                cape_uw: &est_uw.capes,
                cape_rw: &est_rw.capes,
                pc_uw: &pc_uw,
                pc_rw: &pc_rw,
                significance_filter: cfg.significance_filter,
            };
            let results = simulate_all(&inputs, &cfg.costs).map_err(run_err)?;
            for (i, r) in results.iter().enumerate() {
                if !all_units && !treated[i] {
                    continue;
                }
                detail_writer
                    .row(&[
                        r.unit_id.clone(),
                        r.policy_year.to_string(),
                        fmt_bool(treated[i]),
                        fmt_f64(r.private_emc),
                        fmt_f64(r.external_emc),
                        fmt_f64(r.total_emc),
                        fmt_f64(r.cate_uw),
                        fmt_f64(r.cate_rw),
                        fmt_f64(r.pc_uw),
                        fmt_f64(r.pc_rw),
                        fmt_f64(r.price_used),
                    ])
                    .map_err(run_err)?;
                all_results.push(r.clone());
            }
        }
        detail_writer.finish().map_err(run_err)?;
        if all_results.is_empty() {
            continue;
        }
        wrote_any = true;
        let summary = summarize_emc(&all_results, k);
        for (component, mean, sd, share) in [
            ("private", summary.mean_private, summary.sd_private, summary.share_positive_private),
            (
                "external",
                summary.mean_external,
                summary.sd_external,
                summary.share_positive_external,
            ),
            ("total", summary.mean_total, summary.sd_total, summary.share_positive_total),
        ] {
            summary_writer
                .row(&[
                    k.to_string(),
                    component.to_string(),
                    fmt_f64(mean),
                    fmt_f64(sd),
                    fmt_f64(share),
                    summary.n.to_string(),
                ])
                .map_err(run_err)?;
        }
        eprintln!("policy year {k}: {} units simulated", summary.n);
    }
    summary_writer.finish().map_err(run_err)?;
    if !wrote_any {
        return Err(run_err(anyhow::anyhow!("no policy year produced cost effects")));
    }
    println!("cost effects written to {}", cfg.out_dir.display());
    Ok(())
}
