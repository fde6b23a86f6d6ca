//! Cross-fitted residuals for one estimation frame: the outcome and the price
//! are each regressed on the covariates with an honest forest, and residuals
//! use out-of-sample predictions so no unit's own trees score it.

use crate::derive_seed;
use crate::forest::{self, Forest, ForestError, ForestParams};
use crate::matrix::Matrix;
use crate::panel::{EstimationFrame, Panel};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ResidualError {
    #[error("outcome forest: {0}")]
    OutcomeForest(#[source] ForestError),
    #[error("price forest: {0}")]
    PriceForest(#[source] ForestError),
    #[error("io error for {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Residualized frame: y_resid = Y - y_hat_oob, p_resid = P - s_hat_oob,
/// aligned with the frame's row order (treated first, then controls).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualFrame {
    pub frame: EstimationFrame,
    pub y_hat_oob: Vec<f64>,
    pub s_hat_oob: Vec<f64>,
    pub y_resid: Vec<f64>,
    pub p_resid: Vec<f64>,
    pub forest_y: Forest,
    pub forest_s: Forest,
}

impl ResidualFrame {
    pub fn n(&self) -> usize {
        self.y_resid.len()
    }

    pub fn treated_flags(&self) -> Vec<bool> {
        self.frame.treated_flags()
    }

    /// Generalized propensity prediction for an out-of-frame covariate vector.
    /// Full-forest prediction is appropriate here: the unit never trained.
    pub fn predict_gps(&self, x_row: &[f64]) -> f64 {
        self.forest_s.predict(x_row)
    }

    /// False when the leftover price variation is numerically negligible
    /// relative to the raw price scale, i.e. the propensity fit reproduced
    /// prices (up to floating-point dust) and no effect is identified.
    pub fn has_price_variation(&self) -> bool {
        let price_scale = self
            .p_resid
            .iter()
            .zip(&self.s_hat_oob)
            .map(|(r, s)| (r + s).abs())
            .fold(0.0_f64, f64::max);
        let max_resid = self.p_resid.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        max_resid > 1e-9 * price_scale.max(1e-300)
    }
}

/// Fits the two nuisance forests on the frame and returns out-of-sample
/// residuals. The two fits run concurrently on seeds derived from `seed`.
pub fn residualize(
    panel: &Panel,
    frame: &EstimationFrame,
    params_y: &ForestParams,
    params_s: &ForestParams,
    seed: u64,
) -> Result<ResidualFrame, ResidualError> {
    let x = frame.design(panel);
    let y = frame.outcomes(panel);
    let p = frame.prices(panel);
    let (fit_y, fit_s) = rayon::join(
        || forest::fit(&x, &y, params_y, derive_seed(seed, "nuisance-outcome")),
        || forest::fit(&x, &p, params_s, derive_seed(seed, "nuisance-price")),
    );
    let forest_y = fit_y.map_err(ResidualError::OutcomeForest)?;
    let forest_s = fit_s.map_err(ResidualError::PriceForest)?;
    residuals_from_forests(frame.clone(), &x, &y, &p, forest_y, forest_s)
}

/// Rebuilds the residual frame from previously fitted (e.g. deserialized)
/// nuisance forests. Produces exactly what [`residualize`] would have, so
/// cached forests are interchangeable with fresh fits.
pub fn residualize_with_forests(
    panel: &Panel,
    frame: &EstimationFrame,
    forest_y: Forest,
    forest_s: Forest,
) -> Result<ResidualFrame, ResidualError> {
    let x = frame.design(panel);
    let y = frame.outcomes(panel);
    let p = frame.prices(panel);
    residuals_from_forests(frame.clone(), &x, &y, &p, forest_y, forest_s)
}

fn residuals_from_forests(
    frame: EstimationFrame,
    x: &Matrix,
    y: &[f64],
    p: &[f64],
    forest_y: Forest,
    forest_s: Forest,
) -> Result<ResidualFrame, ResidualError> {
    let n = x.nrows();
    let mut y_hat_oob = Vec::with_capacity(n);
    let mut s_hat_oob = Vec::with_capacity(n);
    for i in 0..n {
        y_hat_oob.push(forest_y.predict_oob(i).map_err(ResidualError::OutcomeForest)?);
        s_hat_oob.push(forest_s.predict_oob(i).map_err(ResidualError::PriceForest)?);
    }
    let y_resid: Vec<f64> = y.iter().zip(&y_hat_oob).map(|(a, b)| a - b).collect();
    let p_resid: Vec<f64> = p.iter().zip(&s_hat_oob).map(|(a, b)| a - b).collect();
    Ok(ResidualFrame { frame, y_hat_oob, s_hat_oob, y_resid, p_resid, forest_y, forest_s })
}

/// Audit dump: unit_id, year, y_resid, p_resid, y_hat, s_hat per frame row.
pub fn write_residuals_csv(
    panel: &Panel,
    rf: &ResidualFrame,
    path: &Path,
) -> Result<(), ResidualError> {
    let file = std::fs::File::create(path).map_err(|source| ResidualError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(["unit_id", "year", "y_resid", "p_resid", "y_hat", "s_hat"])?;
    for (i, row) in rf.frame.rows().enumerate() {
        let rec = &panel.records[row as usize];
        w.write_record(&[
            panel.unit_name(rec.unit).to_string(),
            rec.year.to_string(),
            format!("{}", rf.y_resid[i]),
            format!("{}", rf.p_resid[i]),
            format!("{}", rf.y_hat_oob[i]),
            format!("{}", rf.s_hat_oob[i]),
        ])?;
    }
    w.flush().map_err(|source| ResidualError::Io { path: path.display().to_string(), source })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{LoadOptions, Outcome, PanelRecord};
    use crate::stats;
    use rand::Rng;

    /// Frame with randomized prices independent of covariates and a smooth
    /// outcome surface.
    fn synthetic_frame(n_treated: usize, n_control: usize, seed: u64) -> (Panel, EstimationFrame) {
        let mut rng = crate::stream_rng(seed, 0);
        let mut records = Vec::new();
        let mut ids = Vec::new();
        for i in 0..(n_treated + n_control) {
            let treated = i < n_treated;
            let x1: f64 = rng.random_range(-1.0..1.0);
            let x2: f64 = rng.random_range(-1.0..1.0);
            let price = if treated { rng.random_range(0.01..0.18) } else { 0.0 };
            let uw = 200.0 + 30.0 * x1 + 10.0 * x2 + rng.random_range(-1.0..1.0);
            let rw = 250.0 + 20.0 * x2 + rng.random_range(-1.0..1.0);
            ids.push(format!("u{i:04}"));
            records.push(PanelRecord {
                unit: i as u32,
                year: 2012,
                price,
                uw,
                rw,
                tw: uw + rw,
                covariates: vec![x1, x2],
                adoption_year: treated.then_some(2012),
                pc_uw: None,
                pc_rw: None,
            });
        }
        let panel = Panel::from_records(
            ids,
            records,
            vec!["x1".into(), "x2".into()],
            LoadOptions::default(),
        )
        .unwrap();
        let frame = crate::panel::build_frames(&panel, 1, Outcome::Uw).unwrap().remove(0);
        (panel, frame)
    }

    fn test_params() -> ForestParams {
        ForestParams { num_trees: 150, min_leaf_size: 5, ..ForestParams::default() }
    }

    #[test]
    fn residual_identities_hold_exactly() {
        let (panel, frame) = synthetic_frame(40, 60, 3);
        let rf = residualize(&panel, &frame, &test_params(), &test_params(), 17).unwrap();
        let y = frame.outcomes(&panel);
        let p = frame.prices(&panel);
        for i in 0..rf.n() {
            assert_eq!(rf.y_resid[i], y[i] - rf.y_hat_oob[i]);
            assert_eq!(rf.p_resid[i], p[i] - rf.s_hat_oob[i]);
        }
        assert_eq!(rf.n(), frame.n());
    }

    #[test]
    fn randomized_prices_leave_centered_residuals() {
        let (panel, frame) = synthetic_frame(120, 120, 5);
        let rf = residualize(&panel, &frame, &test_params(), &test_params(), 23).unwrap();
        let p = frame.prices(&panel);
        let y = frame.outcomes(&panel);
        // orthogonality at fit scale
        assert!(stats::mean(&rf.p_resid).abs() < 0.05 * stats::sample_sd(&p));
        assert!(stats::mean(&rf.y_resid).abs() < 0.05 * stats::sample_sd(&y));
        // prices independent of x: residual spread stays comparable to raw spread
        let sd_ratio = stats::sample_sd(&rf.p_resid) / stats::sample_sd(&p);
        assert!(sd_ratio > 0.5 && sd_ratio < 1.5, "sd ratio {sd_ratio}");
    }

    #[test]
    fn outcome_residuals_uncorrelated_with_propensity_fit() {
        let (panel, frame) = synthetic_frame(100, 100, 11);
        let rf = residualize(&panel, &frame, &test_params(), &test_params(), 29).unwrap();
        let n = rf.n() as f64;
        let my = stats::mean(&rf.y_resid);
        let ms = stats::mean(&rf.s_hat_oob);
        let cov: f64 = rf
            .y_resid
            .iter()
            .zip(&rf.s_hat_oob)
            .map(|(a, b)| (a - my) * (b - ms))
            .sum::<f64>()
            / (n - 1.0);
        let corr = cov / (stats::sample_sd(&rf.y_resid) * stats::sample_sd(&rf.s_hat_oob));
        // three standard errors of a sample correlation under independence
        assert!(corr.abs() < 3.0 / n.sqrt(), "corr {corr}");
    }

    #[test]
    fn residual_csv_round_trips_row_count() {
        let (panel, frame) = synthetic_frame(10, 14, 2);
        let params = ForestParams { num_trees: 40, min_leaf_size: 2, ..ForestParams::default() };
        let rf = residualize(&panel, &frame, &params, &params, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resid.csv");
        write_residuals_csv(&panel, &rf, &path).unwrap();
        let mut reader = csv::Reader::from_path(&path).unwrap();
        assert_eq!(reader.records().count(), rf.n());
    }
}
