//! Policy effects on municipal costs: the per-unit cost decomposition
//!
//!   EMC = -[ CATE_UW * (PC_UW + EC_UW) + CATE_RW * (PC_RW + EC_RW) ],
//!
//! counterfactual unit-cost prediction for untreated units via a
//! binary-indicator residual learner, and price assignment by closest
//! generalized propensity prediction. Positive EMC values are cost savings.

use crate::causal::{self, CapeEstimate, CausalError, CausalForestParams};
use crate::forest::{self, ForestError, ForestParams};
use crate::panel::{EstimationFrame, Panel};
use crate::residuals::ResidualError;
use crate::stats;
use crate::derive_seed;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("unit cost columns are missing for unit `{0}`")]
    MissingCostColumns(String),
    #[error("no treated units available for price assignment")]
    NoTreatedPrices,
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Causal(#[from] CausalError),
    #[error(transparent)]
    Residual(#[from] ResidualError),
}

/// External marginal costs per kg: unsorted disposal is a cost, recycling a
/// benefit (negative cost).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CostParams {
    pub ec_uw: f64,
    pub ec_rw: f64,
    pub significance_alpha: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams { ec_uw: 0.020, ec_rw: -0.120, significance_alpha: 0.05 }
    }
}

impl CostParams {
    fn validate(&self) -> Result<(), CostError> {
        if !self.ec_uw.is_finite() || self.ec_uw < 0.0 {
            return Err(CostError::NonFiniteInput(format!(
                "ec_uw must be a non-negative cost, got {}",
                self.ec_uw
            )));
        }
        if !self.ec_rw.is_finite() || self.ec_rw > 0.0 {
            return Err(CostError::NonFiniteInput(format!(
                "ec_rw must be a non-positive cost (a benefit), got {}",
                self.ec_rw
            )));
        }
        Ok(())
    }
}

/// Per-unit cost effect in currency per capita; total = private + external
/// exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmcResult {
    pub unit_id: String,
    pub policy_year: u8,
    pub private_emc: f64,
    pub external_emc: f64,
    pub total_emc: f64,
    pub cate_uw: f64,
    pub cate_rw: f64,
    pub pc_uw: f64,
    pub pc_rw: f64,
    pub price_used: f64,
}

/// Eq-style decomposition: the private part carries only management costs,
/// the external part only the environmental constants.
#[allow(clippy::too_many_arguments)]
pub fn compute_emc(
    unit_id: impl Into<String>,
    policy_year: u8,
    cate_uw: f64,
    cate_rw: f64,
    pc_uw: f64,
    pc_rw: f64,
    price_used: f64,
    params: &CostParams,
) -> Result<EmcResult, CostError> {
    params.validate()?;
    for (name, v) in
        [("cate_uw", cate_uw), ("cate_rw", cate_rw), ("pc_uw", pc_uw), ("pc_rw", pc_rw)]
    {
        if !v.is_finite() {
            return Err(CostError::NonFiniteInput(format!("{name} = {v}")));
        }
    }
    if pc_uw < 0.0 || pc_rw < 0.0 {
        return Err(CostError::NonFiniteInput("unit costs must be non-negative".into()));
    }
    let private_emc = -(cate_uw * pc_uw + cate_rw * pc_rw);
    let external_emc = -(cate_uw * params.ec_uw + cate_rw * params.ec_rw);
    Ok(EmcResult {
        unit_id: unit_id.into(),
        policy_year,
        private_emc,
        external_emc,
        total_emc: private_emc + external_emc,
        cate_uw,
        cate_rw,
        pc_uw,
        pc_rw,
        price_used,
    })
}

/// Price for an untreated unit: the price of the treated unit with the
/// closest propensity prediction; exact ties take the lower price.
pub fn assign_price_untreated(
    s_hat_untreated: f64,
    treated_prices: &[(f64, f64)],
) -> Result<f64, CostError> {
    if treated_prices.is_empty() {
        return Err(CostError::NoTreatedPrices);
    }
    let mut best_diff = f64::INFINITY;
    let mut best_price = f64::INFINITY;
    for &(gps, price) in treated_prices {
        let diff = (gps - s_hat_untreated).abs();
        if diff < best_diff || (diff == best_diff && price < best_price) {
            best_diff = diff;
            best_price = price;
        }
    }
    Ok(best_price)
}

/// Policy effect on a unit's management costs, per waste stream, with the
/// replaced-or-observed unit cost to use downstream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnitCostPrediction {
    pub unit_id: String,
    pub effect_uw: f64,
    pub se_uw: f64,
    pub significant_uw: bool,
    pub effect_rw: f64,
    pub se_rw: f64,
    pub significant_rw: bool,
    pub pc_uw_hat: f64,
    pub pc_rw_hat: f64,
    /// True when a replaced cost was clamped at zero.
    pub floored: bool,
}

fn cost_effect_forest(
    x: &crate::matrix::Matrix,
    cost: &[f64],
    w: &[f64],
    treated: &[bool],
    nuisance: &ForestParams,
    causal_params: &CausalForestParams,
    seed: u64,
) -> Result<Vec<CapeEstimate>, CostError> {
    let forest_c = forest::fit(x, cost, nuisance, derive_seed(seed, "cost-outcome"))?;
    let forest_w = forest::fit(x, w, nuisance, derive_seed(seed, "cost-indicator"))?;
    let n = x.nrows();
    let mut c_resid = Vec::with_capacity(n);
    let mut w_resid = Vec::with_capacity(n);
    for i in 0..n {
        c_resid.push(cost[i] - forest_c.predict_oob(i)?);
        w_resid.push(w[i] - forest_w.predict_oob(i)?);
    }
    let cf = causal::fit_causal(x, &c_resid, &w_resid, treated, causal_params, seed)?;
    Ok(cf.cape_rows(x)?)
}

/// Residual learner with the policy indicator as the treatment and unit costs
/// as outcomes. Untreated units whose predicted effect is significant at the
/// configured level get their cost replaced by observed + effect (floored at
/// zero); everyone else keeps the observed cost.
pub fn predict_unit_costs_under_payt(
    panel: &Panel,
    frame: &EstimationFrame,
    nuisance: &ForestParams,
    causal_params: &CausalForestParams,
    params: &CostParams,
    seed: u64,
) -> Result<Vec<UnitCostPrediction>, CostError> {
    let x = frame.design(panel);
    let treated = frame.treated_flags();
    let w: Vec<f64> = treated.iter().map(|&t| f64::from(u8::from(t))).collect();
    let mut pc_uw = Vec::with_capacity(frame.n());
    let mut pc_rw = Vec::with_capacity(frame.n());
    let mut unit_ids = Vec::with_capacity(frame.n());
    for row in frame.rows() {
        let rec = &panel.records[row as usize];
        let id = panel.unit_name(rec.unit).to_string();
        match (rec.pc_uw, rec.pc_rw) {
            (Some(u), Some(r)) => {
                pc_uw.push(u);
                pc_rw.push(r);
            }
            _ => return Err(CostError::MissingCostColumns(id)),
        }
        unit_ids.push(id);
    }
    let capes_uw = cost_effect_forest(
        &x,
        &pc_uw,
        &w,
        &treated,
        nuisance,
        causal_params,
        derive_seed(seed, "pc-uw"),
    )?;
    let capes_rw = cost_effect_forest(
        &x,
        &pc_rw,
        &w,
        &treated,
        nuisance,
        causal_params,
        derive_seed(seed, "pc-rw"),
    )?;
    let z = stats::norm_quantile(1.0 - params.significance_alpha / 2.0);
    let mut out = Vec::with_capacity(frame.n());
    for i in 0..frame.n() {
        let (eu, er) = (&capes_uw[i], &capes_rw[i]);
        let sig_u = eu.delta_hat.abs() > z * eu.std_err;
        let sig_r = er.delta_hat.abs() > z * er.std_err;
        let mut floored = false;
        let mut replace = |observed: f64, effect: f64, significant: bool| -> f64 {
            if treated[i] || !significant {
                return observed;
            }
            let predicted = observed + effect;
            if predicted < 0.0 {
                floored = true;
                0.0
            } else {
                predicted
            }
        };
        let pc_uw_hat = replace(pc_uw[i], eu.delta_hat, sig_u);
        let pc_rw_hat = replace(pc_rw[i], er.delta_hat, sig_r);
        out.push(UnitCostPrediction {
            unit_id: unit_ids[i].clone(),
            effect_uw: eu.delta_hat,
            se_uw: eu.std_err,
            significant_uw: sig_u,
            effect_rw: er.delta_hat,
            se_rw: er.std_err,
            significant_rw: sig_r,
            pc_uw_hat,
            pc_rw_hat,
            floored,
        });
    }
    Ok(out)
}

/// Aligned per-unit inputs for the whole-frame cost simulation.
pub struct SimulationInputs<'a> {
    pub unit_ids: &'a [String],
    pub policy_year: u8,
    pub treated: &'a [bool],
    /// Observed prices (zero for untreated units).
    pub prices: &'a [f64],
    /// Propensity predictions used to assign prices to untreated units.
    pub s_hat: &'a [f64],
    pub cape_uw: &'a [CapeEstimate],
    pub cape_rw: &'a [CapeEstimate],
    /// Unit costs to apply (already replaced where the cost model says so).
    pub pc_uw: &'a [f64],
    pub pc_rw: &'a [f64],
    pub significance_filter: bool,
}

/// Cost effect for every unit in the frame: treated units use their own
/// price, untreated units the price of their closest treated propensity
/// match.
pub fn simulate_all(
    inputs: &SimulationInputs<'_>,
    params: &CostParams,
) -> Result<Vec<EmcResult>, CostError> {
    let n = inputs.unit_ids.len();
    let treated_prices: Vec<(f64, f64)> = (0..n)
        .filter(|&i| inputs.treated[i])
        .map(|i| (inputs.s_hat[i], inputs.prices[i]))
        .collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let price = if inputs.treated[i] {
            inputs.prices[i]
        } else {
            assign_price_untreated(inputs.s_hat[i], &treated_prices)?
        };
        let cate_uw =
            causal::estimate_cate(&inputs.cape_uw[i], price, inputs.significance_filter)?;
        let cate_rw =
            causal::estimate_cate(&inputs.cape_rw[i], price, inputs.significance_filter)?;
        out.push(compute_emc(
            inputs.unit_ids[i].clone(),
            inputs.policy_year,
            cate_uw.value,
            cate_rw.value,
            inputs.pc_uw[i],
            inputs.pc_rw[i],
            price,
            params,
        )?);
    }
    Ok(out)
}

/// Household variable waste charges in currency per capita: price (per liter)
/// times unsorted quantity (kg) through a per-unit liter-per-kg conversion
/// factor; units with a missing factor fall back to the median of the
/// observed ones.
pub fn household_variable_costs(
    prices: &[f64],
    uw_kg: &[f64],
    liters_per_kg: &[Option<f64>],
) -> Result<Vec<f64>, CostError> {
    assert_eq!(prices.len(), uw_kg.len());
    assert_eq!(prices.len(), liters_per_kg.len());
    let observed: Vec<f64> = liters_per_kg.iter().flatten().copied().collect();
    let fallback = if observed.is_empty() {
        None
    } else {
        Some(stats::quantile(&observed, 0.5).expect("non-empty"))
    };
    (0..prices.len())
        .map(|i| {
            let factor = liters_per_kg[i].or(fallback).ok_or_else(|| {
                CostError::NonFiniteInput("no liter-per-kg factor available".into())
            })?;
            Ok(prices[i] * factor * uw_kg[i])
        })
        .collect()
}

/// Mean, spread, and share-positive summary mirroring the cost tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmcSummary {
    pub policy_year: u8,
    pub mean_private: f64,
    pub sd_private: f64,
    pub share_positive_private: f64,
    pub mean_external: f64,
    pub sd_external: f64,
    pub share_positive_external: f64,
    pub mean_total: f64,
    pub sd_total: f64,
    pub share_positive_total: f64,
    pub n: usize,
}

pub fn summarize_emc(results: &[EmcResult], policy_year: u8) -> EmcSummary {
    let pick = |f: fn(&EmcResult) -> f64| -> (f64, f64, f64) {
        let vals: Vec<f64> = results.iter().map(f).collect();
        let positive = vals.iter().filter(|v| **v > 0.0).count() as f64;
        (stats::mean(&vals), stats::sample_sd(&vals), positive / vals.len().max(1) as f64)
    };
    let (mean_private, sd_private, share_positive_private) = pick(|r| r.private_emc);
    let (mean_external, sd_external, share_positive_external) = pick(|r| r.external_emc);
    let (mean_total, sd_total, share_positive_total) = pick(|r| r.total_emc);
    EmcSummary {
        policy_year,
        mean_private,
        sd_private,
        share_positive_private,
        mean_external,
        sd_external,
        share_positive_external,
        mean_total,
        sd_total,
        share_positive_total,
        n: results.len(),
    }
}
