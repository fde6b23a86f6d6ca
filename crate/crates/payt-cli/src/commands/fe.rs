//! `payt fe`: two-way fixed-effects event study per outcome with the pretrend
//! test, plus a method-comparison table joining the forest average effects
//! when `payt estimate` has already run.

use crate::config::RunConfig;
use crate::output::{fmt_f64, CsvWriter};
use crate::pipeline;
use crate::{input_err, run_err, CliResult};
use payt_core::event_study::{fit_event_study, EventStudyOptions};
use std::collections::BTreeMap;

pub fn run(cfg: &RunConfig) -> CliResult {
    let panel = pipeline::load_panel(cfg).map_err(input_err)?;
    let opts = EventStudyOptions::default();
    // lag-1..3 averages per outcome for the comparison table
    let mut fe_estimates: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for &outcome in &cfg.outcomes {
        let result = fit_event_study(&panel, outcome, &opts).map_err(run_err)?;
        let mut writer = CsvWriter::create(
            &cfg.out_dir.join(format!("event_study_{}.csv", outcome.name())),
            &["event_time", "estimate", "std_err"],
        )
        .map_err(run_err)?;
        for (e, (coef, se)) in &result.coefficients {
            writer
                .row(&[e.to_string(), fmt_f64(*coef), fmt_f64(*se)])
                .map_err(run_err)?;
        }
        writer.finish().map_err(run_err)?;
        println!(
            "{}: pretrend joint p = {:.4} over {} obs",
            outcome.name(),
            result.pretrend_joint_p,
            result.n_obs
        );
        let lags: Vec<(f64, f64)> = result
            .coefficients
            .iter()
            .filter(|(e, _)| **e > 0)
            .map(|(_, v)| *v)
            .collect();
        if !lags.is_empty() {
            let mean = lags.iter().map(|(c, _)| c).sum::<f64>() / lags.len() as f64;
            let se = lags.iter().map(|(_, s)| s * s).sum::<f64>().sqrt() / lags.len() as f64;
            fe_estimates.insert(outcome.name().to_string(), (mean, se));
        }
    }

    // join the forest average effects when available
    let ape_path = cfg.out_dir.join("ape_summary.csv");
    if ape_path.exists() {
        let mut reader = csv::Reader::from_path(&ape_path).map_err(run_err)?;
        let mut writer = CsvWriter::create(
            &cfg.out_dir.join("method_comparison.csv"),
            &["outcome", "policy_year", "forest_ape", "forest_se", "fe_mean_lag", "fe_se"],
        )
        .map_err(run_err)?;
        for record in reader.records() {
            let record = record.map_err(run_err)?;
            let outcome = record[0].to_string();
            let (fe_mean, fe_se) =
                fe_estimates.get(&outcome).copied().unwrap_or((f64::NAN, f64::NAN));
            writer
                .row(&[
                    outcome,
                    record[1].to_string(),
                    record[2].to_string(),
                    record[3].to_string(),
                    fmt_f64(fe_mean),
                    fmt_f64(fe_se),
                ])
                .map_err(run_err)?;
        }
        writer.finish().map_err(run_err)?;
    }
    Ok(())
}
