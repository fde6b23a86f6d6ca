//! Two-way fixed-effects event study: the outcome is regressed on the unit's
//! price interacted with event-time dummies after demeaning by unit and year,
//! with unit-clustered standard errors and a joint pretrend test on the
//! leads.
//!
//! Event time labels the adoption year as 1 (policy years 1, 2, 3, ...);
//! pre-adoption years count back from -1 with no year zero. The second lead
//! (-2) is the omitted baseline, and event times beyond the configured window
//! are binned into the endpoints.

use crate::linalg::{self, LinAlgError};
use crate::matrix::Matrix;
use crate::panel::{Outcome, Panel};
use crate::stats::{self, StatsError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EventStudyError {
    #[error("design is singular: {0}")]
    SingularDesign(#[from] LinAlgError),
    #[error("panel needs at least two calendar years and one treated unit")]
    DegeneratePanel,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EventStudyOptions {
    /// Events outside [-window, window] are binned into the endpoints.
    pub window: i32,
    /// Omitted baseline event time.
    pub baseline: i32,
}

impl Default for EventStudyOptions {
    fn default() -> Self {
        EventStudyOptions { window: 3, baseline: -2 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventStudyResult {
    /// event time -> (estimate, cluster-robust standard error); the baseline
    /// is absent by construction.
    pub coefficients: BTreeMap<i32, (f64, f64)>,
    /// Joint Wald p-value that all lead coefficients are zero.
    pub pretrend_joint_p: f64,
    pub n_obs: usize,
    pub n_units: usize,
}

/// Event time with the adoption year labelled 1 and no year zero.
fn event_time(year: i32, adoption: i32, window: i32) -> i32 {
    let r = year - adoption;
    let e = if r >= 0 { r + 1 } else { r };
    e.clamp(-window, window)
}

/// Alternating unit/year demeaning until the update falls below tolerance.
fn within_transform(values: &mut [f64], units: &[usize], years: &[usize], n_units: usize, n_years: usize) {
    for _ in 0..200 {
        let mut unit_sum = vec![0.0; n_units];
        let mut unit_cnt = vec![0usize; n_units];
        for (v, &u) in values.iter().zip(units) {
            unit_sum[u] += v;
            unit_cnt[u] += 1;
        }
        for (v, &u) in values.iter_mut().zip(units) {
            *v -= unit_sum[u] / unit_cnt[u] as f64;
        }
        let mut year_sum = vec![0.0; n_years];
        let mut year_cnt = vec![0usize; n_years];
        for (v, &t) in values.iter().zip(years) {
            year_sum[t] += *v;
            year_cnt[t] += 1;
        }
        let mut moved = 0.0_f64;
        for (v, &t) in values.iter_mut().zip(years) {
            let shift = year_sum[t] / year_cnt[t] as f64;
            *v -= shift;
            moved = moved.max(shift.abs());
        }
        if moved < 1e-12 {
            break;
        }
    }
}

pub fn fit_event_study(
    panel: &Panel,
    outcome: Outcome,
    opts: &EventStudyOptions,
) -> Result<EventStudyResult, EventStudyError> {
    let mut years: Vec<i32> = panel.records.iter().map(|r| r.year).collect();
    years.sort_unstable();
    years.dedup();
    let any_treated = panel.records.iter().any(|r| r.adoption_year.is_some());
    if years.len() < 2 || !any_treated {
        return Err(EventStudyError::DegeneratePanel);
    }
    let year_index: BTreeMap<i32, usize> =
        years.iter().enumerate().map(|(i, y)| (*y, i)).collect();

    // constant post price per unit
    let mut unit_price: BTreeMap<u32, f64> = BTreeMap::new();
    for rec in &panel.records {
        if rec.price > 0.0 {
            unit_price.entry(rec.unit).or_insert(rec.price);
        }
    }

    let candidate_times: Vec<i32> = (-opts.window..=opts.window)
        .filter(|e| *e != 0 && *e != opts.baseline)
        .collect();
    let col_of: BTreeMap<i32, usize> =
        candidate_times.iter().enumerate().map(|(i, e)| (*e, i)).collect();

    let n = panel.records.len();
    let mut y: Vec<f64> = panel.records.iter().map(|r| outcome.of(r)).collect();
    let mut cols: Vec<Vec<f64>> = vec![vec![0.0; n]; candidate_times.len()];
    let units: Vec<usize> = panel.records.iter().map(|r| r.unit as usize).collect();
    let year_ids: Vec<usize> = panel.records.iter().map(|r| year_index[&r.year]).collect();
    for (i, rec) in panel.records.iter().enumerate() {
        if let Some(a) = rec.adoption_year {
            let e = event_time(rec.year, a, opts.window);
            if let Some(&c) = col_of.get(&e) {
                cols[c][i] = unit_price.get(&rec.unit).copied().unwrap_or(0.0);
            }
        }
    }
    // event times never realized in the panel have identically zero columns;
    // they carry no estimate and would make the design singular
    let (event_times, cols): (Vec<i32>, Vec<Vec<f64>>) = candidate_times
        .into_iter()
        .zip(cols)
        .filter(|(_, c)| c.iter().any(|v| *v != 0.0))
        .unzip();
    let mut cols = cols;
    let k = event_times.len();
    if k == 0 {
        return Err(EventStudyError::DegeneratePanel);
    }

    let n_units = panel.n_units();
    let n_years = years.len();
    within_transform(&mut y, &units, &year_ids, n_units, n_years);
    for col in &mut cols {
        within_transform(col, &units, &year_ids, n_units, n_years);
    }

    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        rows.push(cols.iter().map(|c| c[i]).collect::<Vec<f64>>());
    }
    let design = Matrix::from_rows(&rows).expect("rectangular design");
    let fit = linalg::weighted_least_squares(&design, &y, None)?;

    // cluster-robust (by unit) covariance with a CR1-style correction; the
    // absorbed fixed effects count toward the degrees of freedom
    let mut cluster_scores: Vec<Vec<f64>> = vec![vec![0.0; k]; n_units];
    for i in 0..n {
        let score = &mut cluster_scores[units[i]];
        for (j, s) in score.iter_mut().enumerate() {
            *s += design.get(i, j) * fit.residuals[i];
        }
    }
    let mut meat = Matrix::zeros(k, k);
    for score in &cluster_scores {
        for a in 0..k {
            for b in 0..k {
                let v = meat.get(a, b) + score[a] * score[b];
                meat.set(a, b, v);
            }
        }
    }
    let g = n_units as f64;
    let params = (k + n_units + n_years - 1) as f64;
    let correction = (g / (g - 1.0)) * ((n as f64 - 1.0) / (n as f64 - params).max(1.0));
    let mut cov = linalg::sandwich(&fit.xtwx_inv, &meat);
    for a in 0..k {
        for b in 0..k {
            cov.set(a, b, cov.get(a, b) * correction);
        }
    }

    let mut coefficients = BTreeMap::new();
    for (j, e) in event_times.iter().enumerate() {
        coefficients.insert(*e, (fit.coef[j], cov.get(j, j).sqrt()));
    }

    // joint Wald test on the lead coefficients
    let lead_idx: Vec<usize> =
        event_times.iter().enumerate().filter(|(_, e)| **e < 0).map(|(j, _)| j).collect();
    let m = lead_idx.len();
    let mut v_ll = Matrix::zeros(m, m);
    for (a, &ja) in lead_idx.iter().enumerate() {
        for (b, &jb) in lead_idx.iter().enumerate() {
            v_ll.set(a, b, cov.get(ja, jb));
        }
    }
    let b_l: Vec<f64> = lead_idx.iter().map(|&j| fit.coef[j]).collect();
    let chol = linalg::Cholesky::new(&v_ll)?;
    let solved = chol.solve(&b_l)?;
    let wald: f64 = b_l.iter().zip(&solved).map(|(a, b)| a * b).sum();
    let pretrend_joint_p = stats::chi2_sf(wald, m as f64)?;

    Ok(EventStudyResult { coefficients, pretrend_joint_p, n_obs: n, n_units })
}
