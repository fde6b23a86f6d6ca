//! Effect forest on residualized data.
//!
//! Trees are grown to maximize n_L * n_R * (delta_L - delta_R)^2, where delta
//! is the within-node slope of outcome residuals on price residuals. The
//! pointwise effect estimate is the kernel-weighted residual-on-residual
//! slope
//!
//!   delta(x) = sum_i w_i(x) y_resid_i p_resid_i / sum_i w_i(x) p_resid_i^2,
//!
//! and its variance comes from a bootstrap of little bags: trees are grouped
//! into bags grown on shared half-samples, and the between-bag variation of
//! bag-level estimates is debiased by the within-bag variation.

use crate::forest::{grow_tree_effect, ForestError, ForestParams, Tree, NODE_RIDGE};
use crate::matrix::Matrix;
use crate::panel::Outcome;
use crate::stats;
use crate::{derive_seed, stream_rng};
use rand::seq::index::sample as index_sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CausalError {
    #[error("price residuals carry no variation (sum of squares is zero)")]
    NoResidualVariation,
    #[error("leaf constraints are infeasible: {0}")]
    InfeasibleLeafConstraints(String),
    #[error("bag configuration invalid: {0}")]
    BagConfigInvalid(String),
    #[error("weighted price-residual variation at the query point is below tolerance")]
    ZeroLocalPriceVariation,
    #[error("price must be a non-negative finite value, got {0}")]
    InvalidPrice(f64),
    #[error("query vector contains a non-finite value")]
    NonFiniteQuery,
    #[error(transparent)]
    Forest(#[from] ForestError),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CausalForestParams {
    pub forest: ForestParams,
    /// Minimum treated units required in every node (both honesty halves).
    pub min_treated_per_leaf: usize,
    /// Minimum control units required in every node (both honesty halves).
    pub min_control_per_leaf: usize,
    /// Trees per bag for the little-bags variance; 0 disables bagged fitting
    /// (and with it, standard errors).
    pub bag_size: usize,
}

impl Default for CausalForestParams {
    fn default() -> Self {
        CausalForestParams {
            forest: ForestParams::default(),
            min_treated_per_leaf: 1,
            min_control_per_leaf: 1,
            bag_size: 10,
        }
    }
}

/// Pointwise effect estimate with a 95% interval.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CapeEstimate {
    pub unit_id: String,
    pub delta_hat: f64,
    pub std_err: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub significant_05: bool,
}

impl CapeEstimate {
    pub fn with_unit(mut self, unit_id: impl Into<String>) -> Self {
        self.unit_id = unit_id.into();
        self
    }
}

/// Unweighted residual-on-residual slope over one or more frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApeEstimate {
    pub ape: f64,
    pub std_err: f64,
    pub policy_year: u8,
    pub outcome: Outcome,
    pub n: usize,
}

/// Effect scaled to a price level, optionally suppressed by the significance
/// filter.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CateValue {
    pub value: f64,
    pub suppressed: bool,
}

/// delta = sum w y p / sum w p^2. The uniform-weight case equals the
/// unweighted average-effect slope.
pub fn weighted_residual_slope(
    weights: &[f64],
    y_resid: &[f64],
    p_resid: &[f64],
) -> Result<f64, CausalError> {
    let num: f64 = weights
        .iter()
        .zip(y_resid)
        .zip(p_resid)
        .map(|((w, y), p)| w * y * p)
        .sum();
    let den: f64 = weights.iter().zip(p_resid).map(|(w, p)| w * p * p).sum();
    if den <= 0.0 {
        return Err(CausalError::ZeroLocalPriceVariation);
    }
    Ok(num / den)
}

/// Fitted effect forest. Stores its residualized training data, so pointwise
/// queries need no external state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CausalForest {
    pub trees: Vec<Tree>,
    /// Full per-tree subsample (both honesty halves), sorted ascending.
    pub subsamples: Vec<Vec<u32>>,
    pub params: CausalForestParams,
    pub rng_seed: u64,
    pub x: Matrix,
    pub y_resid: Vec<f64>,
    pub p_resid: Vec<f64>,
    pub treated: Vec<bool>,
    /// Weighted denominators below this raise ZeroLocalPriceVariation.
    denom_tol: f64,
}

/// Treated-stratum size of a proportional draw of `m` from (n_t, n_c);
/// mirrors the allocation in [`stratified_sample`] so feasibility can be
/// checked without drawing.
fn stratified_treated_count(n_t: usize, n_c: usize, m: usize) -> usize {
    let n = n_t + n_c;
    let mut m_t = ((m as f64) * (n_t as f64) / (n as f64)).round() as usize;
    if n_t > 0 && m > 0 {
        m_t = m_t.max(1);
    }
    m_t = m_t.min(n_t).min(m);
    if m - m_t > n_c {
        m_t = (m - n_c).min(n_t);
    }
    m_t
}

/// Estimation-half size for a group of `g` members under the honest split;
/// mirrors [`stratified_honesty_split`].
fn honest_take(g: usize, h: f64) -> usize {
    if g == 0 {
        0
    } else if g == 1 {
        1
    } else {
        ((h * g as f64).round() as usize).clamp(1, g - 1)
    }
}

/// Proportional draw of `m` indices from the treated and control strata, so
/// every subsample carries both groups whenever the data does.
fn stratified_sample(
    treated_idx: &[u32],
    control_idx: &[u32],
    m: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<u32> {
    let n_t = treated_idx.len();
    let n_c = control_idx.len();
    let n = n_t + n_c;
    debug_assert!(m <= n);
    let mut m_t = ((m as f64) * (n_t as f64) / (n as f64)).round() as usize;
    if n_t > 0 && m > 0 {
        m_t = m_t.max(1);
    }
    m_t = m_t.min(n_t).min(m);
    let mut m_c = m - m_t;
    if m_c > n_c {
        m_t = (m - n_c).min(n_t);
        m_c = m - m_t;
    }
    let mut out: Vec<u32> =
        index_sample(rng, n_t, m_t).into_iter().map(|i| treated_idx[i]).collect();
    out.extend(index_sample(rng, n_c, m_c).into_iter().map(|i| control_idx[i]));
    out.sort_unstable();
    out
}

/// Stratified honest split: estimation and split halves each keep a
/// proportional share of treated and control units.
fn stratified_honesty_split(
    subsample: &[u32],
    treated: &[bool],
    honesty_fraction: Option<f64>,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> (Vec<u32>, Vec<u32>) {
    let Some(h) = honesty_fraction else {
        return (subsample.to_vec(), subsample.to_vec());
    };
    let mut est = Vec::new();
    let mut split = Vec::new();
    for is_treated in [true, false] {
        let mut group: Vec<u32> = subsample
            .iter()
            .copied()
            .filter(|&r| treated[r as usize] == is_treated)
            .collect();
        if group.is_empty() {
            continue;
        }
        group.shuffle(rng);
        let take = if group.len() == 1 {
            1
        } else {
            ((h * group.len() as f64).round() as usize).clamp(1, group.len() - 1)
        };
        est.extend_from_slice(&group[..take]);
        split.extend_from_slice(&group[take..]);
    }
    est.sort_unstable();
    split.sort_unstable();
    if split.is_empty() {
        // degenerate tiny subsample: fall back to non-honest
        return (subsample.to_vec(), subsample.to_vec());
    }
    (split, est)
}

/// Fits the effect forest. With `bag_size` g > 0, trees are grouped into
/// num_trees / g bags; each bag draws a shared half-sample and its trees
/// subsample inside it, which is what the little-bags variance requires.
pub fn fit_causal(
    x: &Matrix,
    y_resid: &[f64],
    p_resid: &[f64],
    treated: &[bool],
    params: &CausalForestParams,
    seed: u64,
) -> Result<CausalForest, CausalError> {
    let n = x.nrows();
    let d = x.ncols();
    params.forest.validate(d)?;
    if y_resid.len() != n || p_resid.len() != n || treated.len() != n {
        return Err(CausalError::Forest(ForestError::InvalidParams(
            "residual and flag vectors must match design rows".into(),
        )));
    }
    if x.check_finite().is_err() || y_resid.iter().chain(p_resid).any(|v| !v.is_finite()) {
        return Err(CausalError::Forest(ForestError::NonFiniteInput));
    }
    if n < 2 * params.forest.min_leaf_size {
        return Err(CausalError::Forest(ForestError::TooFewRows {
            need: 2 * params.forest.min_leaf_size,
            got: n,
        }));
    }
    let root_pp: f64 = p_resid.iter().map(|p| p * p).sum();
    if root_pp <= 0.0 {
        return Err(CausalError::NoResidualVariation);
    }
    let treated_idx: Vec<u32> = (0..n as u32).filter(|&r| treated[r as usize]).collect();
    let control_idx: Vec<u32> = (0..n as u32).filter(|&r| !treated[r as usize]).collect();
    if treated_idx.len() < params.min_treated_per_leaf {
        return Err(CausalError::InfeasibleLeafConstraints(format!(
            "{} treated units cannot satisfy min_treated_per_leaf {}",
            treated_idx.len(),
            params.min_treated_per_leaf
        )));
    }
    if control_idx.len() < params.min_control_per_leaf {
        return Err(CausalError::InfeasibleLeafConstraints(format!(
            "{} control units cannot satisfy min_control_per_leaf {}",
            control_idx.len(),
            params.min_control_per_leaf
        )));
    }
    let num_trees = params.forest.num_trees;
    let bags_enabled = params.bag_size > 0;
    if bags_enabled {
        let g = params.bag_size;
        if !num_trees.is_multiple_of(g) {
            return Err(CausalError::BagConfigInvalid(format!(
                "num_trees {num_trees} is not divisible by bag_size {g}"
            )));
        }
        if num_trees / g < 2 {
            return Err(CausalError::BagConfigInvalid(
                "need at least two bags for the little-bags variance".into(),
            ));
        }
        if params.forest.subsample_fraction > 0.5 {
            return Err(CausalError::BagConfigInvalid(
                "bagged fitting requires subsample_fraction <= 0.5 (trees draw inside half-samples)"
                    .into(),
            ));
        }
    }

    let m = params.forest.subsample_size(n);
    // subsample and honesty-half stratum sizes are deterministic, so the
    // every-leaf treated/control minimums can be verified up front: an
    // unsplit tree's single leaf (all estimation rows) must satisfy them
    {
        let (pool_t, pool_c) = if bags_enabled {
            let half = n.div_ceil(2);
            let h_t = stratified_treated_count(treated_idx.len(), control_idx.len(), half);
            (h_t, half - h_t)
        } else {
            (treated_idx.len(), control_idx.len())
        };
        let m_eff = m.min(pool_t + pool_c);
        let m_t = stratified_treated_count(pool_t, pool_c, m_eff);
        let m_c = m_eff - m_t;
        let check = |label: &str, m_g: usize, min_g: usize| -> Result<(), CausalError> {
            let leaf_members = match params.forest.honesty_fraction {
                None => m_g,
                Some(h) => honest_take(m_g, h),
            };
            if leaf_members < min_g {
                return Err(CausalError::InfeasibleLeafConstraints(format!(
                    "subsamples place only {leaf_members} {label} units in the estimation                      half, below the per-leaf minimum {min_g}"
                )));
            }
            Ok(())
        };
        check("treated", m_t, params.min_treated_per_leaf)?;
        check("control", m_c, params.min_control_per_leaf)?;
    }
    let mtry = params.forest.resolved_mtry(d);
    let denom_floor = 1e-8 * (root_pp / n as f64);
    let bag_seed = derive_seed(seed, "bag");
    let tree_seed = derive_seed(seed, "tree");

    // bag half-samples are drawn up front; each is shared by its g trees
    let half_samples: Vec<(Vec<u32>, Vec<u32>)> = if bags_enabled {
        let n_bags = num_trees / params.bag_size;
        (0..n_bags)
            .map(|j| {
                let mut rng = stream_rng(bag_seed, j as u64);
                let half = n.div_ceil(2);
                let sample = stratified_sample(&treated_idx, &control_idx, half, &mut rng);
                let t: Vec<u32> =
                    sample.iter().copied().filter(|&r| treated[r as usize]).collect();
                let c: Vec<u32> =
                    sample.iter().copied().filter(|&r| !treated[r as usize]).collect();
                (t, c)
            })
            .collect()
    } else {
        Vec::new()
    };

    let grown: Vec<(Tree, Vec<u32>)> = (0..num_trees)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(tree_seed, b as u64);
            let (pool_t, pool_c) = if bags_enabled {
                let bag = b / params.bag_size;
                (&half_samples[bag].0, &half_samples[bag].1)
            } else {
                (&treated_idx, &control_idx)
            };
            let subsample =
                stratified_sample(pool_t, pool_c, m.min(pool_t.len() + pool_c.len()), &mut rng);
            let (split_half, est_half) = stratified_honesty_split(
                &subsample,
                treated,
                params.forest.honesty_fraction,
                &mut rng,
            );
            let tree = grow_tree_effect(
                x,
                y_resid,
                p_resid,
                treated,
                params,
                denom_floor,
                mtry,
                &split_half,
                &est_half,
                &mut rng,
            );
            (tree, subsample)
        })
        .collect();
    let (trees, subsamples): (Vec<_>, Vec<_>) = grown.into_iter().unzip();
    Ok(CausalForest {
        trees,
        subsamples,
        params: params.clone(),
        rng_seed: seed,
        x: x.clone(),
        y_resid: y_resid.to_vec(),
        p_resid: p_resid.to_vec(),
        treated: treated.to_vec(),
        denom_tol: 1e-10 * (root_pp / n as f64),
    })
}

/// Frame-aware fit: rejects frames whose leftover price variation is
/// floating-point dust relative to the raw prices, then runs [`fit_causal`].
pub fn fit_causal_frame(
    rf: &crate::residuals::ResidualFrame,
    panel: &crate::panel::Panel,
    params: &CausalForestParams,
    seed: u64,
) -> Result<CausalForest, CausalError> {
    if !rf.has_price_variation() {
        return Err(CausalError::NoResidualVariation);
    }
    let x = rf.frame.design(panel);
    fit_causal(&x, &rf.y_resid, &rf.p_resid, &rf.frame.treated_flags(), params, seed)
}

/// Per-tree leaf aggregates at a query point.
#[derive(Clone, Copy)]
struct TreeMoments {
    num: f64, // mean of y_resid * p_resid over the leaf
    den: f64, // mean of p_resid^2 over the leaf
}

impl CausalForest {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    fn tree_moments(&self, tree: &Tree, x_row: &[f64]) -> TreeMoments {
        let members = tree.leaf_members(x_row);
        let mut num = 0.0;
        let mut den = 0.0;
        for &r in members {
            let r = r as usize;
            num += self.y_resid[r] * self.p_resid[r];
            den += self.p_resid[r] * self.p_resid[r];
        }
        let k = members.len() as f64;
        TreeMoments { num: num / k, den: den / k }
    }

    /// Kernel weights over training rows, identical in form to the regression
    /// forest weights.
    pub fn kernel_weights_of(&self, x_row: &[f64]) -> Vec<f64> {
        let mut weights = vec![0.0; self.n_rows()];
        let inv_b = 1.0 / self.trees.len() as f64;
        for tree in &self.trees {
            let members = tree.leaf_members(x_row);
            let w = inv_b / members.len() as f64;
            for &r in members {
                weights[r as usize] += w;
            }
        }
        weights
    }

    fn moments(&self, x_row: &[f64]) -> Result<Vec<TreeMoments>, CausalError> {
        if x_row.iter().any(|v| !v.is_finite()) {
            return Err(CausalError::NonFiniteQuery);
        }
        Ok(self.trees.iter().map(|t| self.tree_moments(t, x_row)).collect())
    }

    /// Pointwise effect with little-bags standard error and 95% interval.
    pub fn cape(&self, x_row: &[f64]) -> Result<CapeEstimate, CausalError> {
        let moments = self.moments(x_row)?;
        let b = moments.len() as f64;
        let num: f64 = moments.iter().map(|m| m.num).sum::<f64>() / b;
        let den: f64 = moments.iter().map(|m| m.den).sum::<f64>() / b;
        if den <= self.denom_tol {
            return Err(CausalError::ZeroLocalPriceVariation);
        }
        let delta = num / den;
        if self.params.bag_size == 0 {
            return Ok(CapeEstimate {
                unit_id: String::new(),
                delta_hat: delta,
                std_err: f64::NAN,
                ci_low: f64::NAN,
                ci_high: f64::NAN,
                significant_05: false,
            });
        }
        let std_err = self.variance_from_moments(&moments)?.sqrt();
        let z = stats::z_975();
        let ci_low = delta - z * std_err;
        let ci_high = delta + z * std_err;
        Ok(CapeEstimate {
            unit_id: String::new(),
            delta_hat: delta,
            std_err,
            ci_low,
            ci_high,
            significant_05: !(ci_low <= 0.0 && 0.0 <= ci_high),
        })
    }

    pub fn cape_rows(&self, x: &Matrix) -> Result<Vec<CapeEstimate>, CausalError> {
        (0..x.nrows()).into_par_iter().map(|i| self.cape(x.row(i))).collect()
    }

    /// Little-bags variance at a query point.
    pub fn little_bags_variance(&self, x_row: &[f64]) -> Result<f64, CausalError> {
        let moments = self.moments(x_row)?;
        self.variance_from_moments(&moments)
    }

    /// Between-bag variance of bag-level estimates, debiased by the within-bag
    /// variance of tree-level estimates, plus the Monte Carlo noise of
    /// averaging finitely many bags:
    ///   sigma^2 = max(V_between - V_within / g, 0) + V_between / n_bags.
    /// The final term vanishes as the forest grows; with few trees it keeps
    /// the interval honest about finite-forest noise.
    fn variance_from_moments(&self, moments: &[TreeMoments]) -> Result<f64, CausalError> {
        let g = self.params.bag_size;
        if g == 0 || !moments.len().is_multiple_of(g) || moments.len() / g < 2 {
            return Err(CausalError::BagConfigInvalid(
                "variance needs a bagged fit with at least two bags".into(),
            ));
        }
        let n_bags = moments.len() / g;
        let mut bag_deltas = Vec::with_capacity(n_bags);
        let mut within_acc = 0.0;
        for bag in moments.chunks(g) {
            let num: f64 = bag.iter().map(|m| m.num).sum::<f64>() / g as f64;
            let den: f64 = bag.iter().map(|m| m.den).sum::<f64>() / g as f64;
            let bag_delta = num / (den + NODE_RIDGE);
            bag_deltas.push(bag_delta);
            if g > 1 {
                let within: f64 = bag
                    .iter()
                    .map(|m| {
                        let t = m.num / (m.den + NODE_RIDGE);
                        (t - bag_delta) * (t - bag_delta)
                    })
                    .sum::<f64>()
                    / (g - 1) as f64;
                within_acc += within;
            }
        }
        let v_between = stats::sample_variance(&bag_deltas);
        let v_within = within_acc / n_bags as f64;
        let debiased = (v_between - v_within / g as f64).max(0.0);
        Ok(debiased + v_between / n_bags as f64)
    }
}

/// One frame's residuals for average-effect pooling; `calendar_year` is the
/// cluster label.
#[derive(Debug, Clone, Copy)]
pub struct ApeInput<'a> {
    pub y_resid: &'a [f64],
    pub p_resid: &'a [f64],
    pub calendar_year: i32,
}

fn pooled_slope(inputs: &[ApeInput<'_>]) -> Result<f64, CausalError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for frame in inputs {
        for (y, p) in frame.y_resid.iter().zip(frame.p_resid) {
            num += y * p;
            den += p * p;
        }
    }
    if den <= 0.0 {
        return Err(CausalError::NoResidualVariation);
    }
    Ok(num / den)
}

/// Unweighted residual-on-residual slope pooled over frames. The standard
/// error is a cluster bootstrap over calendar-year clusters; with a single
/// year the heteroskedasticity-robust analytic form is used instead.
pub fn estimate_ape(
    inputs: &[ApeInput<'_>],
    policy_year: u8,
    outcome: Outcome,
    n_boot: usize,
    seed: u64,
) -> Result<ApeEstimate, CausalError> {
    let ape = pooled_slope(inputs)?;
    let n: usize = inputs.iter().map(|f| f.y_resid.len()).sum();
    let mut years: Vec<i32> = inputs.iter().map(|f| f.calendar_year).collect();
    years.sort_unstable();
    years.dedup();
    let std_err = if years.len() >= 2 {
        let mut rng = stream_rng(derive_seed(seed, "ape-cluster-bootstrap"), 0);
        let mut slopes = Vec::with_capacity(n_boot);
        for _ in 0..n_boot {
            let picks: Vec<usize> =
                (0..inputs.len()).map(|_| rng.random_range(0..inputs.len())).collect();
            let resampled: Vec<ApeInput<'_>> = picks.iter().map(|&j| inputs[j]).collect();
            if let Ok(slope) = pooled_slope(&resampled) {
                slopes.push(slope);
            }
        }
        if slopes.len() < 2 {
            f64::NAN
        } else {
            stats::sample_sd(&slopes)
        }
    } else {
        // HC0 slope variance for the no-intercept regression
        let mut meat = 0.0;
        let mut den = 0.0;
        for frame in inputs {
            for (y, p) in frame.y_resid.iter().zip(frame.p_resid) {
                let e = y - ape * p;
                meat += (p * e) * (p * e);
                den += p * p;
            }
        }
        meat.sqrt() / den
    };
    Ok(ApeEstimate { ape, std_err, policy_year, outcome, n })
}

/// CATE at a price level: price * delta(x). With the significance filter on,
/// insignificant pointwise effects are set to zero and flagged.
pub fn estimate_cate(
    cape: &CapeEstimate,
    price: f64,
    significance_filter: bool,
) -> Result<CateValue, CausalError> {
    if !price.is_finite() || price < 0.0 {
        return Err(CausalError::InvalidPrice(price));
    }
    if significance_filter && !cape.significant_05 {
        return Ok(CateValue { value: 0.0, suppressed: true });
    }
    Ok(CateValue { value: price * cape.delta_hat, suppressed: false })
}
