//! Heterogeneity summaries for pointwise effect estimates: a variance-based
//! homogeneity test, a median-split subgroup contrast, a best linear
//! projection onto prices and features, point elasticities by price band, and
//! studentized-range pairwise group comparisons.

use crate::linalg::{self, LinAlgError};
use crate::matrix::Matrix;
use crate::stats::{self, StatsError};
use crate::{derive_seed, stream_rng};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HeterogeneityError {
    #[error("need at least {need} groups with two or more members, got {got}")]
    DegenerateGroups { need: usize, got: usize },
    #[error("price band holds no units")]
    EmptyBand,
    #[error("design matrix is rank deficient")]
    RankDeficientDesign(#[from] LinAlgError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("input length mismatch: {0}")]
    LengthMismatch(String),
}

/// Levene's homogeneity-of-variance test on absolute deviations from group
/// means. Identical values everywhere yield (0, 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeveneTest {
    pub statistic: f64,
    pub p_value: f64,
    pub df1: usize,
    pub df2: usize,
}

pub fn levene_heterogeneity(groups: &[Vec<f64>]) -> Result<LeveneTest, HeterogeneityError> {
    let usable = groups.iter().filter(|g| g.len() >= 2).count();
    if groups.len() < 2 || usable < groups.len() {
        return Err(HeterogeneityError::DegenerateGroups { need: 2, got: usable });
    }
    let k = groups.len();
    let n: usize = groups.iter().map(Vec::len).sum();
    let z_groups: Vec<Vec<f64>> = groups
        .iter()
        .map(|g| {
            let m = stats::mean(g);
            g.iter().map(|v| (v - m).abs()).collect()
        })
        .collect();
    let z_means: Vec<f64> = z_groups.iter().map(|z| stats::mean(z)).collect();
    let grand: f64 =
        z_groups.iter().flatten().sum::<f64>() / n as f64;
    let between: f64 = z_groups
        .iter()
        .zip(&z_means)
        .map(|(z, m)| z.len() as f64 * (m - grand) * (m - grand))
        .sum();
    let within: f64 = z_groups
        .iter()
        .zip(&z_means)
        .map(|(z, m)| z.iter().map(|v| (v - m) * (v - m)).sum::<f64>())
        .sum();
    let df1 = k - 1;
    let df2 = n - k;
    if within <= 0.0 {
        // all deviations equal; no evidence either way unless between differs
        let statistic = if between > 0.0 { f64::INFINITY } else { 0.0 };
        let p_value = if between > 0.0 { 0.0 } else { 1.0 };
        return Ok(LeveneTest { statistic, p_value, df1, df2 });
    }
    let statistic = (df2 as f64 / df1 as f64) * (between / within);
    let p_value = stats::f_sf(statistic, df1 as f64, df2 as f64)?;
    Ok(LeveneTest { statistic, p_value, df1, df2 })
}

/// Grouping for the homogeneity test against a dose response monotone in one
/// driver: a sign-mixed group against a sign-pure group with interleaved
/// magnitudes.
///
/// Under homogeneity the two groups have matched estimation-noise profiles
/// (same magnitude distribution of the driver), so the variance test holds
/// its level; under a monotone response the mixed group spans both response
/// directions and spreads far wider. Units are restricted to a central
/// magnitude band and subsampled on a spacing grid, keeping the test close
/// to its effective sample size despite cross-unit smoothing correlation.
/// Returns (sign-pure, sign-mixed) or None when a group would be degenerate.
pub fn sign_mixture_groups(driver: &[f64], deltas: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    assert_eq!(driver.len(), deltas.len());
    let abs_all: Vec<f64> = driver.iter().map(|v| v.abs()).collect();
    let band_hi = stats::quantile(&abs_all, 0.8).ok()?;
    let mut band: Vec<usize> =
        (0..driver.len()).filter(|&i| driver[i].abs() <= band_hi).collect();
    band.sort_by(|&a, &b| driver[a].partial_cmp(&driver[b]).unwrap());
    let take = 60.max(driver.len() / 8);
    let step = (band.len() / take).max(1);
    let band: Vec<usize> = band.iter().step_by(step).copied().take(take).collect();
    let mut pos: Vec<usize> = band.iter().copied().filter(|&i| driver[i] > 0.0).collect();
    let neg: Vec<usize> = band.iter().copied().filter(|&i| driver[i] < 0.0).collect();
    pos.sort_by(|&a, &b| driver[a].partial_cmp(&driver[b]).unwrap());
    let mut mixed: Vec<f64> = neg.iter().map(|&i| deltas[i]).collect();
    let mut pure = Vec::new();
    for (rank, &i) in pos.iter().enumerate() {
        if rank % 2 == 0 {
            pure.push(deltas[i]);
        } else {
            mixed.push(deltas[i]);
        }
    }
    (pure.len() >= 2 && mixed.len() >= 2).then_some((pure, mixed))
}

/// One pooled observation for subgroup contrasts: its residuals, its cluster
/// label (calendar year), and its pointwise effect estimate.
#[derive(Debug, Clone, Copy)]
pub struct SubgroupRow {
    pub y_resid: f64,
    pub p_resid: f64,
    pub calendar_year: i32,
    pub delta_hat: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubgroupApeReport {
    pub ape_high: f64,
    pub ape_low: f64,
    pub abs_diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_high: usize,
    pub n_low: usize,
}

fn slope(rows: &[&SubgroupRow]) -> f64 {
    let num: f64 = rows.iter().map(|r| r.y_resid * r.p_resid).sum();
    let den: f64 = rows.iter().map(|r| r.p_resid * r.p_resid).sum();
    num / den
}

/// Splits units at the median pointwise effect (ties go to the low group),
/// estimates the residual-on-residual slope per subgroup, and bootstraps the
/// difference. Clusters are calendar years when more than one is present,
/// otherwise individual rows.
pub fn subgroup_ape_diff(
    rows: &[SubgroupRow],
    n_boot: usize,
    seed: u64,
) -> Result<SubgroupApeReport, HeterogeneityError> {
    if rows.len() < 4 {
        return Err(HeterogeneityError::DegenerateGroups { need: 2, got: rows.len() / 2 });
    }
    let deltas: Vec<f64> = rows.iter().map(|r| r.delta_hat).collect();
    let median = stats::quantile(&deltas, 0.5)?;
    let assign_high: Vec<bool> = rows.iter().map(|r| r.delta_hat > median).collect();
    let n_high = assign_high.iter().filter(|b| **b).count();
    let n_low = rows.len() - n_high;
    if n_high < 2 || n_low < 2 {
        return Err(HeterogeneityError::DegenerateGroups { need: 2, got: n_high.min(n_low) });
    }
    let subgroup_slopes = |idx: &[usize]| -> (f64, f64) {
        let high: Vec<&SubgroupRow> =
            idx.iter().filter(|&&i| assign_high[i]).map(|&i| &rows[i]).collect();
        let low: Vec<&SubgroupRow> =
            idx.iter().filter(|&&i| !assign_high[i]).map(|&i| &rows[i]).collect();
        (slope(&high), slope(&low))
    };
    let all: Vec<usize> = (0..rows.len()).collect();
    let (ape_high, ape_low) = subgroup_slopes(&all);

    let mut years: Vec<i32> = rows.iter().map(|r| r.calendar_year).collect();
    years.sort_unstable();
    years.dedup();
    let clusters: Vec<Vec<usize>> = if years.len() >= 2 {
        years
            .iter()
            .map(|y| {
                (0..rows.len()).filter(|&i| rows[i].calendar_year == *y).collect::<Vec<usize>>()
            })
            .collect()
    } else {
        (0..rows.len()).map(|i| vec![i]).collect()
    };
    let mut rng = stream_rng(derive_seed(seed, "subgroup-bootstrap"), 0);
    let mut diffs = Vec::with_capacity(n_boot);
    for _ in 0..n_boot {
        let mut idx = Vec::with_capacity(rows.len());
        for _ in 0..clusters.len() {
            let pick = rng.random_range(0..clusters.len());
            idx.extend_from_slice(&clusters[pick]);
        }
        let picked_high = idx.iter().filter(|&&i| assign_high[i]).count();
        if picked_high < 2 || idx.len() - picked_high < 2 {
            continue;
        }
        let (h, l) = subgroup_slopes(&idx);
        if h.is_finite() && l.is_finite() {
            diffs.push(h - l);
        }
    }
    let (ci_low, ci_high) = if diffs.len() >= 10 {
        (stats::quantile(&diffs, 0.025)?, stats::quantile(&diffs, 0.975)?)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(SubgroupApeReport {
        ape_high,
        ape_low,
        abs_diff: (ape_high - ape_low).abs(),
        ci_low,
        ci_high,
        n_high,
        n_low,
    })
}

/// Weighted least squares of pointwise effects on
/// [1, p, p^2, features, p x features] with a heteroskedasticity-robust
/// covariance. Weights are inverse squared standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlpModel {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub covariance: Matrix,
    pub n: usize,
}

impl BlpModel {
    pub fn std_errs(&self) -> Vec<f64> {
        (0..self.coef.len()).map(|j| self.covariance.get(j, j).sqrt()).collect()
    }

    pub fn t_stats(&self) -> Vec<f64> {
        self.coef.iter().zip(self.std_errs()).map(|(c, s)| c / s).collect()
    }

    fn design_row(&self, price: f64, features: &[f64]) -> Vec<f64> {
        let mut row = vec![1.0, price, price * price];
        row.extend_from_slice(features);
        row.extend(features.iter().map(|f| price * f));
        row
    }

    pub fn fitted(&self, price: f64, features: &[f64]) -> f64 {
        self.design_row(price, features)
            .iter()
            .zip(&self.coef)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Fitted value and half-width of the pointwise 95% band.
    pub fn fitted_with_band(&self, price: f64, features: &[f64]) -> (f64, f64) {
        let row = self.design_row(price, features);
        let fit: f64 = row.iter().zip(&self.coef).map(|(a, b)| a * b).sum();
        let mut var = 0.0;
        for a in 0..row.len() {
            for b in 0..row.len() {
                var += row[a] * self.covariance.get(a, b) * row[b];
            }
        }
        (fit, stats::z_975() * var.max(0.0).sqrt())
    }
}

pub fn best_linear_projection(
    deltas: &[f64],
    std_errs: &[f64],
    prices: &[f64],
    features: &Matrix,
    feature_names: &[String],
) -> Result<BlpModel, HeterogeneityError> {
    let n = deltas.len();
    if std_errs.len() != n || prices.len() != n || features.nrows() != n {
        return Err(HeterogeneityError::LengthMismatch(
            "deltas, std_errs, prices, and features must align".into(),
        ));
    }
    let m = features.ncols();
    if feature_names.len() != m {
        return Err(HeterogeneityError::LengthMismatch("feature names".into()));
    }
    let k = 3 + 2 * m;
    if n <= k {
        return Err(HeterogeneityError::DegenerateGroups { need: k + 1, got: n });
    }
    let mut rows = Vec::with_capacity(n);
    for (i, p) in prices.iter().enumerate() {
        let mut row = vec![1.0, *p, p * p];
        row.extend_from_slice(features.row(i));
        row.extend(features.row(i).iter().map(|f| p * f));
        rows.push(row);
    }
    let design = Matrix::from_rows(&rows).expect("construction is rectangular");
    let floor = std_errs.iter().fold(f64::INFINITY, |a, &b| a.min(b)).max(1e-12);
    let weights: Vec<f64> =
        std_errs.iter().map(|s| 1.0 / s.max(floor).powi(2)).collect();
    let fit = linalg::weighted_least_squares(&design, deltas, Some(&weights))?;
    let covariance = linalg::robust_covariance(&design, &fit, Some(&weights));
    let mut names = vec!["intercept".to_string(), "price".to_string(), "price^2".to_string()];
    names.extend(feature_names.iter().cloned());
    names.extend(feature_names.iter().map(|f| format!("price:{f}")));
    Ok(BlpModel { names, coef: fit.coef, covariance, n })
}

/// Price bands over the treated price distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceBand {
    LowestQuartile,
    HighestQuartile,
    All,
}

/// Indices of treated units falling in the requested band of the price
/// distribution.
pub fn band_indices(prices: &[f64], band: PriceBand) -> Result<Vec<usize>, HeterogeneityError> {
    if prices.is_empty() {
        return Err(HeterogeneityError::EmptyBand);
    }
    let idx: Vec<usize> = match band {
        PriceBand::All => (0..prices.len()).collect(),
        PriceBand::LowestQuartile => {
            let q = stats::quantile(prices, 0.25)?;
            (0..prices.len()).filter(|&i| prices[i] <= q).collect()
        }
        PriceBand::HighestQuartile => {
            let q = stats::quantile(prices, 0.75)?;
            (0..prices.len()).filter(|&i| prices[i] >= q).collect()
        }
    };
    if idx.is_empty() {
        return Err(HeterogeneityError::EmptyBand);
    }
    Ok(idx)
}

/// Point price elasticity at band means:
/// epsilon = mean(delta) * mean(price) / mean(outcome).
pub fn point_elasticity(
    deltas: &[f64],
    prices: &[f64],
    outcomes: &[f64],
) -> Result<f64, HeterogeneityError> {
    if deltas.is_empty() || deltas.len() != prices.len() || deltas.len() != outcomes.len() {
        return Err(HeterogeneityError::EmptyBand);
    }
    Ok(stats::mean(deltas) * stats::mean(prices) / stats::mean(outcomes))
}

/// One Tukey-Kramer pairwise comparison of group means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub group_a: String,
    pub group_b: String,
    pub mean_diff: f64,
    pub std_err: f64,
    pub p_value: f64,
}

/// Studentized-range adjusted comparisons of group mean effects.
pub fn pairwise_cape_comparison(
    groups: &[(String, Vec<f64>)],
) -> Result<Vec<PairwiseComparison>, HeterogeneityError> {
    let usable = groups.iter().filter(|(_, g)| g.len() >= 2).count();
    if groups.len() < 2 || usable < groups.len() {
        return Err(HeterogeneityError::DegenerateGroups { need: 2, got: usable });
    }
    let k = groups.len();
    let n: usize = groups.iter().map(|(_, g)| g.len()).sum();
    let df = n - k;
    let pooled_var: f64 = groups
        .iter()
        .map(|(_, g)| (g.len() - 1) as f64 * stats::sample_variance(g))
        .sum::<f64>()
        / df as f64;
    let mut out = Vec::new();
    for a in 0..k {
        for b in (a + 1)..k {
            let (na, nb) = (groups[a].1.len() as f64, groups[b].1.len() as f64);
            let mean_diff = stats::mean(&groups[a].1) - stats::mean(&groups[b].1);
            let std_err = (pooled_var * (1.0 / na + 1.0 / nb)).sqrt();
            let q_se = (pooled_var / 2.0 * (1.0 / na + 1.0 / nb)).sqrt();
            let p_value = if pooled_var <= 0.0 {
                if mean_diff == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                let q = mean_diff.abs() / q_se;
                1.0 - stats::studentized_range_cdf(q, k, df as f64)?
            };
            out.push(PairwiseComparison {
                group_a: groups[a].0.clone(),
                group_b: groups[b].0.clone(),
                mean_diff,
                std_err,
                p_value,
            });
        }
    }
    Ok(out)
}

/// Moving-window slope of y on x: for each window of the given bandwidth in
/// x, the least-squares slope at the window center. A plotting aid, not an
/// estimator; bandwidth must be supplied by the caller.
pub fn moving_window_slope(
    x: &[f64],
    y: &[f64],
    bandwidth: f64,
    centers: usize,
) -> Vec<(f64, f64)> {
    assert_eq!(x.len(), y.len());
    if x.is_empty() || bandwidth <= 0.0 || centers == 0 {
        return Vec::new();
    }
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::new();
    for c in 0..centers {
        let center = lo + (hi - lo) * (c as f64 + 0.5) / centers as f64;
        let idx: Vec<usize> =
            (0..x.len()).filter(|&i| (x[i] - center).abs() <= bandwidth).collect();
        if idx.len() < 3 {
            continue;
        }
        let mx = idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64;
        let my = idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64;
        let num: f64 = idx.iter().map(|&i| (x[i] - mx) * (y[i] - my)).sum();
        let den: f64 = idx.iter().map(|&i| (x[i] - mx) * (x[i] - mx)).sum();
        if den > 0.0 {
            out.push((center, num / den));
        }
    }
    out
}
