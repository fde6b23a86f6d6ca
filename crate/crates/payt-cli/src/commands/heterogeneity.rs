//! `payt heterogeneity`: homogeneity test, median-split subgroup contrast,
//! best linear projection with a plot grid, point elasticities by price band,
//! and pairwise group comparisons. Consumes the files written by
//! `payt estimate`.

use crate::config::RunConfig;
use crate::output::{fmt_f64, CsvWriter};
use crate::pipeline;
use crate::{input_err, run_err, CliResult};
use anyhow::{anyhow, Context, Result};
use payt_core::heterogeneity::{
    band_indices, best_linear_projection, levene_heterogeneity, pairwise_cape_comparison,
    point_elasticity, subgroup_ape_diff, PriceBand, SubgroupRow,
};
use payt_core::household::substitution_classification;
use payt_core::matrix::Matrix;
use payt_core::panel::{Outcome, Panel};
use payt_core::stats;
use std::collections::BTreeMap;
use std::path::Path;

/// One row read back from a `cape_<outcome>_y<k>.csv` file.
struct CapeRow {
    unit_id: String,
    delta: f64,
    std_err: f64,
    calendar_year: i32,
    treated: bool,
    price: f64,
}

fn read_cape_file(path: &Path) -> Result<Vec<CapeRow>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("reading {} (run `payt estimate` first)", path.display()))?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("column {name} missing in {}", path.display()))
    };
    let (c_unit, c_delta, c_se, c_year, c_treated, c_price) = (
        col("unit_id")?,
        col("delta_hat")?,
        col("std_err")?,
        col("calendar_year")?,
        col("treated")?,
        col("price")?,
    );
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(CapeRow {
            unit_id: record[c_unit].to_string(),
            delta: record[c_delta].parse()?,
            std_err: record[c_se].parse()?,
            calendar_year: record[c_year].parse()?,
            treated: &record[c_treated] == "1",
            price: record[c_price].parse()?,
        });
    }
    Ok(rows)
}

/// y_resid and p_resid per (unit, calendar year) from the audit dumps.
fn read_residuals(
    cfg: &RunConfig,
    outcome: Outcome,
    k: u8,
    calendar_years: &[i32],
) -> Result<BTreeMap<(String, i32), (f64, f64)>> {
    let mut out = BTreeMap::new();
    for year in calendar_years {
        let path =
            cfg.out_dir.join(format!("residuals_{}_y{k}_{year}.csv", outcome.name()));
        let mut reader = csv::Reader::from_path(&path)
            .with_context(|| format!("reading {} (run `payt estimate` first)", path.display()))?;
        for record in reader.records() {
            let record = record?;
            out.insert(
                (record[0].to_string(), *year),
                (record[2].parse()?, record[3].parse()?),
            );
        }
    }
    Ok(out)
}

fn cape_path(cfg: &RunConfig, outcome: Outcome, k: u8) -> std::path::PathBuf {
    cfg.out_dir.join(format!("cape_{}_y{k}.csv", outcome.name()))
}

/// Group deltas by the requested label: per policy year, or quartiles of a
/// covariate at the configured policy year.
fn grouped_deltas(
    cfg: &RunConfig,
    panel: &Panel,
    outcome: Outcome,
    group_by: &str,
) -> Result<Vec<(String, Vec<f64>)>> {
    if group_by == "policy_year" {
        let mut groups = Vec::new();
        for &k in &cfg.policy_years {
            let path = cape_path(cfg, outcome, k);
            if !path.exists() {
                continue;
            }
            let rows = read_cape_file(&path)?;
            groups.push((format!("y{k}"), rows.iter().map(|r| r.delta).collect()));
        }
        return Ok(groups);
    }
    let Some(column) = group_by.strip_prefix("covariate:") else {
        return Err(anyhow!(
            "unknown grouping `{group_by}` (expected policy_year or covariate:<name>)"
        ));
    };
    let cov_idx = panel
        .covariate_names
        .iter()
        .position(|c| c == column)
        .ok_or_else(|| anyhow!("covariate `{column}` not in the panel"))?;
    let k = cfg.heterogeneity_policy_year;
    let rows = read_cape_file(&cape_path(cfg, outcome, k))?;
    // covariate value per (unit, calendar year)
    let mut values = Vec::with_capacity(rows.len());
    for row in &rows {
        let rec = panel
            .records
            .iter()
            .find(|r| panel.unit_name(r.unit) == row.unit_id && r.year == row.calendar_year)
            .ok_or_else(|| anyhow!("unit {} not found in panel", row.unit_id))?;
        values.push(rec.covariates[cov_idx]);
    }
    let q25 = stats::quantile(&values, 0.25)?;
    let q50 = stats::quantile(&values, 0.50)?;
    let q75 = stats::quantile(&values, 0.75)?;
    let mut groups: Vec<(String, Vec<f64>)> = ["q1", "q2", "q3", "q4"]
        .iter()
        .map(|l| (format!("{column}-{l}"), Vec::new()))
        .collect();
    for (row, v) in rows.iter().zip(&values) {
        let slot = if *v <= q25 {
            0
        } else if *v <= q50 {
            1
        } else if *v <= q75 {
            2
        } else {
            3
        };
        groups[slot].1.push(row.delta);
    }
    groups.retain(|(_, g)| !g.is_empty());
    Ok(groups)
}

pub fn run(cfg: &RunConfig, group_by: &str) -> CliResult {
    let panel = pipeline::load_panel(cfg).map_err(input_err)?;

    // homogeneity test per outcome
    let mut levene_writer = CsvWriter::create(
        &cfg.out_dir.join("levene.csv"),
        &["outcome", "grouping", "statistic", "p_value", "df1", "df2"],
    )
    .map_err(run_err)?;
    for &outcome in &cfg.outcomes {
        let groups = grouped_deltas(cfg, &panel, outcome, group_by).map_err(run_err)?;
        if groups.len() < 2 {
            eprintln!("levene: fewer than two groups for {}", outcome.name());
            continue;
        }
        let vecs: Vec<Vec<f64>> = groups.iter().map(|(_, g)| g.clone()).collect();
        let test = levene_heterogeneity(&vecs).map_err(run_err)?;
        levene_writer
            .row(&[
                outcome.name().to_string(),
                group_by.to_string(),
                fmt_f64(test.statistic),
                fmt_f64(test.p_value),
                test.df1.to_string(),
                test.df2.to_string(),
            ])
            .map_err(run_err)?;

        // pairwise comparisons over the same grouping
        let pairwise = pairwise_cape_comparison(&groups).map_err(run_err)?;
        let mut pw_writer = CsvWriter::create(
            &cfg.out_dir.join(format!("pairwise_{}.csv", outcome.name())),
            &["group_a", "group_b", "mean_diff", "std_err", "p_value"],
        )
        .map_err(run_err)?;
        for cmp in &pairwise {
            pw_writer
                .row(&[
                    cmp.group_a.clone(),
                    cmp.group_b.clone(),
                    fmt_f64(cmp.mean_diff),
                    fmt_f64(cmp.std_err),
                    fmt_f64(cmp.p_value),
                ])
                .map_err(run_err)?;
        }
        pw_writer.finish().map_err(run_err)?;
    }
    levene_writer.finish().map_err(run_err)?;

    // median-split subgroup contrast per (outcome, policy year)
    let mut sub_writer = CsvWriter::create(
        &cfg.out_dir.join("subgroup_ape.csv"),
        &[
            "outcome",
            "policy_year",
            "ape_high",
            "ape_low",
            "abs_diff",
            "ci_low",
            "ci_high",
            "n_high",
            "n_low",
        ],
    )
    .map_err(run_err)?;
    for &outcome in &cfg.outcomes {
        for &k in &cfg.policy_years {
            let path = cape_path(cfg, outcome, k);
            if !path.exists() {
                continue;
            }
            let capes = read_cape_file(&path).map_err(run_err)?;
            let mut years: Vec<i32> = capes.iter().map(|r| r.calendar_year).collect();
            years.sort_unstable();
            years.dedup();
            let resid = read_residuals(cfg, outcome, k, &years).map_err(run_err)?;
            let rows: Vec<SubgroupRow> = capes
                .iter()
                .map(|c| {
                    let (y_resid, p_resid) = resid[&(c.unit_id.clone(), c.calendar_year)];
                    SubgroupRow {
                        y_resid,
                        p_resid,
                        calendar_year: c.calendar_year,
                        delta_hat: c.delta,
                    }
                })
                .collect();
            let report =
                subgroup_ape_diff(&rows, cfg.ape_bootstrap, cfg.seed).map_err(run_err)?;
            sub_writer
                .row(&[
                    outcome.name().to_string(),
                    k.to_string(),
                    fmt_f64(report.ape_high),
                    fmt_f64(report.ape_low),
                    fmt_f64(report.abs_diff),
                    fmt_f64(report.ci_low),
                    fmt_f64(report.ci_high),
                    report.n_high.to_string(),
                    report.n_low.to_string(),
                ])
                .map_err(run_err)?;
        }
    }
    sub_writer.finish().map_err(run_err)?;

    // projection and elasticities at the configured policy year, treated only
    let k = cfg.heterogeneity_policy_year;
    let mut el_writer = CsvWriter::create(
        &cfg.out_dir.join("elasticity.csv"),
        &["outcome", "band", "elasticity", "n"],
    )
    .map_err(run_err)?;
    for &outcome in &cfg.outcomes {
        let path = cape_path(cfg, outcome, k);
        if !path.exists() {
            continue;
        }
        let capes: Vec<CapeRow> = read_cape_file(&path)
            .map_err(run_err)?
            .into_iter()
            .filter(|c| c.treated)
            .collect();
        if capes.is_empty() {
            continue;
        }
        // outcome level per treated row for the elasticity denominator
        let mut outcomes_obs = Vec::with_capacity(capes.len());
        for c in &capes {
            let rec = panel
                .records
                .iter()
                .find(|r| panel.unit_name(r.unit) == c.unit_id && r.year == c.calendar_year)
                .ok_or_else(|| run_err(anyhow!("unit {} missing from panel", c.unit_id)))?;
            outcomes_obs.push(outcome.of(rec));
        }
        let deltas: Vec<f64> = capes.iter().map(|c| c.delta).collect();
        let prices: Vec<f64> = capes.iter().map(|c| c.price).collect();
        for (label, band) in
            [("lowest_quartile", PriceBand::LowestQuartile), ("highest_quartile", PriceBand::HighestQuartile)]
        {
            let idx = band_indices(&prices, band).map_err(run_err)?;
            let d: Vec<f64> = idx.iter().map(|&i| deltas[i]).collect();
            let p: Vec<f64> = idx.iter().map(|&i| prices[i]).collect();
            let y: Vec<f64> = idx.iter().map(|&i| outcomes_obs[i]).collect();
            let eps = point_elasticity(&d, &p, &y).map_err(run_err)?;
            el_writer
                .row(&[
                    outcome.name().to_string(),
                    label.to_string(),
                    fmt_f64(eps),
                    idx.len().to_string(),
                ])
                .map_err(run_err)?;
        }

        if !cfg.blp_features.is_empty() {
            let feat_idx: Vec<usize> = cfg
                .blp_features
                .iter()
                .map(|name| {
                    panel
                        .covariate_names
                        .iter()
                        .position(|c| c == name)
                        .ok_or_else(|| anyhow!("blp feature `{name}` not in the panel"))
                })
                .collect::<Result<_>>()
                .map_err(run_err)?;
            let mut feat_rows = Vec::with_capacity(capes.len());
            for c in &capes {
                let rec = panel
                    .records
                    .iter()
                    .find(|r| panel.unit_name(r.unit) == c.unit_id && r.year == c.calendar_year)
                    .expect("validated above");
                feat_rows.push(feat_idx.iter().map(|&j| rec.covariates[j]).collect::<Vec<f64>>());
            }
            let features = Matrix::from_rows(&feat_rows).map_err(|e| run_err(anyhow!("{e}")))?;
            let std_errs: Vec<f64> = capes.iter().map(|c| c.std_err).collect();
            let model = best_linear_projection(
                &deltas,
                &std_errs,
                &prices,
                &features,
                &cfg.blp_features,
            )
            .map_err(run_err)?;
            let mut blp_writer = CsvWriter::create(
                &cfg.out_dir.join(format!("blp_{}_y{k}.csv", outcome.name())),
                &["term", "estimate", "std_err", "t_stat"],
            )
            .map_err(run_err)?;
            let ses = model.std_errs();
            let ts = model.t_stats();
            for (j, name) in model.names.iter().enumerate() {
                blp_writer
                    .row(&[
                        name.clone(),
                        fmt_f64(model.coef[j]),
                        fmt_f64(ses[j]),
                        fmt_f64(ts[j]),
                    ])
                    .map_err(run_err)?;
            }
            blp_writer.finish().map_err(run_err)?;

            // fitted curve over the price range at mean features
            let feat_means: Vec<f64> = (0..features.ncols())
                .map(|j| {
                    (0..features.nrows()).map(|i| features.get(i, j)).sum::<f64>()
                        / features.nrows() as f64
                })
                .collect();
            let p_min = prices.iter().cloned().fold(f64::INFINITY, f64::min);
            let p_max = prices.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut curve_writer = CsvWriter::create(
                &cfg.out_dir.join(format!("blp_curve_{}_y{k}.csv", outcome.name())),
                &["price", "fitted", "band_low", "band_high"],
            )
            .map_err(run_err)?;
            for step in 0..=40 {
                let p = p_min + (p_max - p_min) * step as f64 / 40.0;
                let (fit, half) = model.fitted_with_band(p, &feat_means);
                curve_writer
                    .row(&[
                        fmt_f64(p),
                        fmt_f64(fit),
                        fmt_f64(fit - half),
                        fmt_f64(fit + half),
                    ])
                    .map_err(run_err)?;
            }
            curve_writer.finish().map_err(run_err)?;
        }
    }
    el_writer.finish().map_err(run_err)?;

    // substitution pattern between recycling and avoidance responses
    let rw_path = cape_path(cfg, Outcome::Rw, k);
    let tw_path = cape_path(cfg, Outcome::Tw, k);
    if rw_path.exists() && tw_path.exists() {
        let rw: BTreeMap<(String, i32), f64> = read_cape_file(&rw_path)
            .map_err(run_err)?
            .into_iter()
            .map(|c| ((c.unit_id, c.calendar_year), c.delta))
            .collect();
        let tw = read_cape_file(&tw_path).map_err(run_err)?;
        let mut pairs = Vec::new();
        for c in &tw {
            if let Some(&d_rw) = rw.get(&(c.unit_id.clone(), c.calendar_year)) {
                // avoidance response is the negative of the total response
                pairs.push((d_rw, -c.delta));
            }
        }
        if pairs.len() > 2 {
            let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let (corr, class) = substitution_classification(&xs, &ys);
            let label = format!("{class:?}").to_lowercase();
            println!("recycling vs avoidance response correlation: {corr:.4} ({label})");
            let mut w = CsvWriter::create(
                &cfg.out_dir.join("substitution.csv"),
                &["correlation", "classification", "n"],
            )
            .map_err(run_err)?;
            w.row(&[fmt_f64(corr), label, pairs.len().to_string()]).map_err(run_err)?;
            w.finish().map_err(run_err)?;
        }
    }
    println!("heterogeneity reports written to {}", cfg.out_dir.display());
    Ok(())
}
