//! Overlap diagnostics on generalized propensity predictions: normalized mean
//! difference, cross-group quantile coverage, and nearest-match caliper
//! shares.

use crate::stats::{self, StatsError};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OverlapError {
    #[error("both treated and control groups must be non-empty")]
    EmptyGroup,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OverlapOptions {
    /// Caliper threshold on the propensity difference to the nearest
    /// opposite-group unit (default 0.10).
    pub caliper: f64,
    /// Relative mode divides the difference by the neighbor's propensity;
    /// absolute mode uses the raw difference.
    pub caliper_relative: bool,
}

impl Default for OverlapOptions {
    fn default() -> Self {
        OverlapOptions { caliper: 0.10, caliper_relative: true }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GroupQuartiles {
    pub mean: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OverlapReport {
    /// (mean_T - mean_C) / sqrt((var_T + var_C) / 2)
    pub normalized_diff: f64,
    /// Share of treated units inside the [.025, .975] quantiles of the
    /// control propensity distribution.
    pub coverage_treated: f64,
    /// Share of control units inside the [.025, .975] quantiles of the
    /// treated propensity distribution.
    pub coverage_control: f64,
    /// Share of treated units whose nearest control is within the caliper.
    pub caliper_share_treated: f64,
    /// Share of control units whose nearest treated unit is within the
    /// caliper.
    pub caliper_share_control: f64,
    pub quartiles_treated: GroupQuartiles,
    pub quartiles_control: GroupQuartiles,
    pub n_treated: usize,
    pub n_control: usize,
}

impl fmt::Display for OverlapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "overlap report ({} treated, {} control)", self.n_treated, self.n_control)?;
        writeln!(f, "normalized difference: {:.4}", self.normalized_diff)?;
        writeln!(
            f,
            "coverage inside opposite [.025,.975] quantiles: treated {:.1}%, control {:.1}%",
            100.0 * self.coverage_treated,
            100.0 * self.coverage_control
        )?;
        writeln!(
            f,
            "caliper matches: treated {:.1}%, control {:.1}%",
            100.0 * self.caliper_share_treated,
            100.0 * self.caliper_share_control
        )?;
        writeln!(
            f,
            "treated quartiles: mean {:.4}, q25 {:.4}, q50 {:.4}, q75 {:.4}",
            self.quartiles_treated.mean,
            self.quartiles_treated.q25,
            self.quartiles_treated.q50,
            self.quartiles_treated.q75
        )?;
        writeln!(
            f,
            "control quartiles: mean {:.4}, q25 {:.4}, q50 {:.4}, q75 {:.4}",
            self.quartiles_control.mean,
            self.quartiles_control.q25,
            self.quartiles_control.q50,
            self.quartiles_control.q75
        )
    }
}

fn quartiles(xs: &[f64]) -> Result<GroupQuartiles, OverlapError> {
    Ok(GroupQuartiles {
        mean: stats::mean(xs),
        q25: stats::quantile(xs, 0.25)?,
        q50: stats::quantile(xs, 0.50)?,
        q75: stats::quantile(xs, 0.75)?,
    })
}

fn share_within(xs: &[f64], lo: f64, hi: f64) -> f64 {
    xs.iter().filter(|v| lo <= **v && **v <= hi).count() as f64 / xs.len() as f64
}

fn caliper_share(own: &[f64], other: &[f64], opts: &OverlapOptions) -> f64 {
    let hit = |s: f64| -> bool {
        let mut best = f64::INFINITY;
        let mut best_other = f64::NAN;
        for &o in other {
            let d = (s - o).abs();
            if d < best {
                best = d;
                best_other = o;
            }
        }
        if opts.caliper_relative {
            let denom = best_other.abs().max(1e-300);
            best / denom < opts.caliper
        } else {
            best < opts.caliper
        }
    };
    own.iter().filter(|&&s| hit(s)).count() as f64 / own.len() as f64
}

/// Computes the full overlap report from propensity predictions and treatment
/// flags.
pub fn overlap_report(
    s_hat: &[f64],
    treated: &[bool],
    opts: &OverlapOptions,
) -> Result<OverlapReport, OverlapError> {
    assert_eq!(s_hat.len(), treated.len());
    let t: Vec<f64> =
        s_hat.iter().zip(treated).filter(|(_, &f)| f).map(|(s, _)| *s).collect();
    let c: Vec<f64> =
        s_hat.iter().zip(treated).filter(|(_, &f)| !f).map(|(s, _)| *s).collect();
    if t.is_empty() || c.is_empty() {
        return Err(OverlapError::EmptyGroup);
    }
    let var_t = if t.len() > 1 { stats::sample_variance(&t) } else { 0.0 };
    let var_c = if c.len() > 1 { stats::sample_variance(&c) } else { 0.0 };
    let pooled = ((var_t + var_c) / 2.0).sqrt();
    let normalized_diff = if pooled > 0.0 {
        (stats::mean(&t) - stats::mean(&c)) / pooled
    } else if stats::mean(&t) == stats::mean(&c) {
        0.0
    } else {
        f64::INFINITY * (stats::mean(&t) - stats::mean(&c)).signum()
    };
    let coverage_treated =
        share_within(&t, stats::quantile(&c, 0.025)?, stats::quantile(&c, 0.975)?);
    let coverage_control =
        share_within(&c, stats::quantile(&t, 0.025)?, stats::quantile(&t, 0.975)?);
    Ok(OverlapReport {
        normalized_diff,
        coverage_treated,
        coverage_control,
        caliper_share_treated: caliper_share(&t, &c, opts),
        caliper_share_control: caliper_share(&c, &t, opts),
        quartiles_treated: quartiles(&t)?,
        quartiles_control: quartiles(&c)?,
        n_treated: t.len(),
        n_control: c.len(),
    })
}
