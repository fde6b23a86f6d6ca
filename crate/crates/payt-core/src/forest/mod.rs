//! Honest subsampled regression forest for the nuisance models
//! y(x) = E[Y | X = x] and s(x) = E[P | X = x].
//!
//! Prediction averages per-tree leaf means over trees whose leaves contain the
//! query point; the same forest admits an exact kernel representation
//! prediction(x) = sum_i w_i(x) * target_i with weights summing to one.

mod growth;

pub(crate) use growth::{GrowCriterion, GrowSpec, NODE_RIDGE};
pub use growth::{Node, Tree};

use crate::matrix::Matrix;
use crate::{derive_seed, stream_rng};
use rand::seq::index::sample as index_sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("subsample of {subsample} rows cannot honor min_leaf_size {min_leaf} in both honesty halves")]
    SubsampleTooSmall { subsample: usize, min_leaf: usize },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("non-finite value in training input")]
    NonFiniteInput,
    #[error("unit {0} is in every tree subsample; no out-of-sample trees (lower subsample_fraction)")]
    NoOobTrees(usize),
    #[error("serialized forest has format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("io error for {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ForestParams {
    pub num_trees: usize,
    pub min_leaf_size: usize,
    /// Candidate split features per node; 0 selects ceil(sqrt(d)) at fit time.
    pub mtry: usize,
    pub subsample_fraction: f64,
    pub imbalance_penalty: f64,
    /// Share of each subsample reserved for leaf estimation; None disables
    /// honest splitting.
    pub honesty_fraction: Option<f64>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            num_trees: 1000,
            min_leaf_size: 5,
            mtry: 0,
            subsample_fraction: 0.5,
            imbalance_penalty: 0.0,
            honesty_fraction: Some(0.5),
        }
    }
}

impl ForestParams {
    pub(crate) fn validate(&self, d: usize) -> Result<(), ForestError> {
        if self.num_trees == 0 {
            return Err(ForestError::InvalidParams("num_trees must be positive".into()));
        }
        if self.min_leaf_size == 0 {
            return Err(ForestError::InvalidParams("min_leaf_size must be positive".into()));
        }
        if self.mtry > d {
            return Err(ForestError::InvalidParams(format!(
                "mtry {} exceeds covariate count {d}",
                self.mtry
            )));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(ForestError::InvalidParams("subsample_fraction must be in (0, 1]".into()));
        }
        if self.imbalance_penalty < 0.0 {
            return Err(ForestError::InvalidParams("imbalance_penalty must be non-negative".into()));
        }
        if let Some(h) = self.honesty_fraction {
            if !(h > 0.0 && h < 1.0) {
                return Err(ForestError::InvalidParams("honesty_fraction must be in (0, 1)".into()));
            }
        }
        Ok(())
    }

    pub(crate) fn resolved_mtry(&self, d: usize) -> usize {
        if self.mtry == 0 {
            (d as f64).sqrt().ceil() as usize
        } else {
            self.mtry
        }
    }

    pub(crate) fn subsample_size(&self, n: usize) -> usize {
        ((self.subsample_fraction * n as f64).ceil() as usize).clamp(1, n)
    }
}

/// Splits a subsample into (split, estimation) halves; with honesty disabled
/// both halves are the full subsample.
pub(crate) fn honesty_split(
    subsample: &[u32],
    honesty_fraction: Option<f64>,
    min_leaf: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(Vec<u32>, Vec<u32>), ForestError> {
    match honesty_fraction {
        None => Ok((subsample.to_vec(), subsample.to_vec())),
        Some(h) => {
            let m = subsample.len();
            let est_count = ((h * m as f64).round() as usize).clamp(1, m.saturating_sub(1));
            if est_count < min_leaf || m - est_count == 0 {
                return Err(ForestError::SubsampleTooSmall { subsample: m, min_leaf });
            }
            let mut shuffled = subsample.to_vec();
            shuffled.shuffle(rng);
            let (est, split) = shuffled.split_at(est_count);
            let mut est = est.to_vec();
            let mut split = split.to_vec();
            est.sort_unstable();
            split.sort_unstable();
            Ok((split, est))
        }
    }
}

pub const FOREST_FORMAT_VERSION: u32 = 1;

/// A fitted regression forest. Immutable and thread-safe after construction.
/// Carries its training design and target so out-of-sample prediction and the
/// kernel representation need no external state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    /// Full per-tree subsample (both honesty halves), sorted ascending.
    pub subsamples: Vec<Vec<u32>>,
    pub params: ForestParams,
    pub rng_seed: u64,
    /// Training design matrix.
    pub x: Matrix,
    /// Training target copy; leaf means are computed from it on demand.
    pub target: Vec<f64>,
    /// True when the training target was constant.
    pub degenerate: bool,
}

#[derive(Serialize, Deserialize)]
struct ForestFile {
    format_version: u32,
    forest: Forest,
}

/// Fits `params.num_trees` trees on independent subsamples drawn without
/// replacement. Deterministic in `(x, target, params, seed)` for any worker
/// count: every tree has its own RNG stream keyed by the tree index.
pub fn fit(
    x: &Matrix,
    target: &[f64],
    params: &ForestParams,
    seed: u64,
) -> Result<Forest, ForestError> {
    let n = x.nrows();
    let d = x.ncols();
    params.validate(d)?;
    if target.len() != n {
        return Err(ForestError::InvalidParams("target length must match rows".into()));
    }
    if n < 2 * params.min_leaf_size {
        return Err(ForestError::TooFewRows { need: 2 * params.min_leaf_size, got: n });
    }
    if x.check_finite().is_err() || target.iter().any(|v| !v.is_finite()) {
        return Err(ForestError::NonFiniteInput);
    }
    let m = params.subsample_size(n);
    let mtry = params.resolved_mtry(d);
    let tree_seed = derive_seed(seed, "tree");
    let grown: Result<Vec<(Tree, Vec<u32>)>, ForestError> = (0..params.num_trees)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(tree_seed, b as u64);
            let mut subsample: Vec<u32> =
                index_sample(&mut rng, n, m).into_iter().map(|i| i as u32).collect();
            subsample.sort_unstable();
            let (split_half, est_half) =
                honesty_split(&subsample, params.honesty_fraction, params.min_leaf_size, &mut rng)?;
            let spec = GrowSpec {
                x,
                criterion: GrowCriterion::Variance { y: target },
                min_leaf_size: params.min_leaf_size,
                mtry,
                imbalance_penalty: params.imbalance_penalty,
            };
            Ok((growth::grow_tree(&spec, &split_half, &est_half, &mut rng), subsample))
        })
        .collect();
    let grown = grown?;
    let (trees, subsamples): (Vec<_>, Vec<_>) = grown.into_iter().unzip();
    let first = target[0];
    let degenerate = target.iter().all(|v| *v == first);
    Ok(Forest {
        trees,
        subsamples,
        params: params.clone(),
        rng_seed: seed,
        x: x.clone(),
        target: target.to_vec(),
        degenerate,
    })
}

impl Forest {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    fn tree_mean(&self, tree: &Tree, x_row: &[f64]) -> f64 {
        let members = tree.leaf_members(x_row);
        let sum: f64 = members.iter().map(|&r| self.target[r as usize]).sum();
        sum / members.len() as f64
    }

    /// Average of per-tree leaf means at `x_row`.
    pub fn predict(&self, x_row: &[f64]) -> f64 {
        debug_assert_eq!(x_row.len(), self.n_features());
        let sum: f64 = self.trees.iter().map(|t| self.tree_mean(t, x_row)).sum();
        sum / self.trees.len() as f64
    }

    pub fn predict_rows(&self, x: &Matrix) -> Vec<f64> {
        (0..x.nrows()).into_par_iter().map(|i| self.predict(x.row(i))).collect()
    }

    /// Prediction for training row `i` restricted to trees whose subsample
    /// excludes `i`.
    pub fn predict_oob(&self, i: usize) -> Result<f64, ForestError> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (tree, subsample) in self.trees.iter().zip(&self.subsamples) {
            if subsample.binary_search(&(i as u32)).is_err() {
                sum += self.tree_mean(tree, self.x.row(i));
                count += 1;
            }
        }
        if count == 0 {
            return Err(ForestError::NoOobTrees(i));
        }
        Ok(sum / count as f64)
    }

    /// Number of trees whose subsample excludes training row `i`.
    pub fn oob_tree_count(&self, i: usize) -> usize {
        self.subsamples.iter().filter(|s| s.binary_search(&(i as u32)).is_err()).count()
    }

    /// Kernel weights over training rows:
    /// w_i(x) = (1/B) sum_b 1{i in leaf_b(x)} / |leaf_b(x)|; sums to one.
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

    pub fn save(&self, path: &Path) -> Result<(), ForestError> {
        let file = ForestFile { format_version: FOREST_FORMAT_VERSION, forest: self.clone() };
        let bytes = serde_json::to_vec(&file)?;
        std::fs::write(path, bytes)
            .map_err(|source| ForestError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Forest, ForestError> {
        let bytes = std::fs::read(path)
            .map_err(|source| ForestError::Io { path: path.display().to_string(), source })?;
        let file: ForestFile = serde_json::from_slice(&bytes)?;
        if file.format_version != FOREST_FORMAT_VERSION {
            return Err(ForestError::VersionMismatch {
                found: file.format_version,
                expected: FOREST_FORMAT_VERSION,
            });
        }
        Ok(file.forest)
    }
}

/// Grows one effect-criterion tree for the causal forest; the caller manages
/// subsampling, honesty halves, and bag structure.
#[allow(clippy::too_many_arguments)]
pub(crate) fn grow_tree_effect(
    x: &Matrix,
    y_resid: &[f64],
    p_resid: &[f64],
    treated: &[bool],
    params: &crate::causal::CausalForestParams,
    denom_floor: f64,
    mtry: usize,
    split_half: &[u32],
    est_half: &[u32],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Tree {
    let spec = GrowSpec {
        x,
        criterion: GrowCriterion::Effect {
            y_resid,
            p_resid,
            treated,
            min_treated: params.min_treated_per_leaf,
            min_control: params.min_control_per_leaf,
            denom_floor,
        },
        min_leaf_size: params.forest.min_leaf_size,
        mtry,
        imbalance_penalty: params.forest.imbalance_penalty,
    };
    growth::grow_tree(&spec, split_half, est_half, rng)
}

/// Grid searched by [`cross_validate`]; out-of-sample squared error decides.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneGrid {
    pub min_leaf_size: Vec<usize>,
    pub mtry: Vec<usize>,
    pub imbalance_penalty: Vec<f64>,
    /// Trees per candidate fit; the winning parameters are refit at full size.
    pub num_trees: usize,
}

impl TuneGrid {
    pub fn default_for(d: usize) -> Self {
        let mut mtry = vec![(d as f64).sqrt().ceil() as usize, (d as f64 / 3.0).ceil() as usize];
        mtry.sort_unstable();
        mtry.dedup();
        TuneGrid {
            min_leaf_size: vec![5, 10, 25],
            mtry,
            imbalance_penalty: vec![0.0, 0.5],
            num_trees: 200,
        }
    }
}

/// Picks the grid point minimizing out-of-bag mean squared error. Ties keep
/// the earlier grid point, so the search is deterministic.
pub fn cross_validate(
    x: &Matrix,
    target: &[f64],
    base: &ForestParams,
    grid: &TuneGrid,
    seed: u64,
) -> Result<(ForestParams, f64), ForestError> {
    let mut best: Option<(ForestParams, f64)> = None;
    for &min_leaf_size in &grid.min_leaf_size {
        if x.nrows() < 2 * min_leaf_size {
            continue;
        }
        for &mtry in &grid.mtry {
            for &imbalance_penalty in &grid.imbalance_penalty {
                let candidate = ForestParams {
                    num_trees: grid.num_trees,
                    min_leaf_size,
                    mtry: mtry.min(x.ncols()),
                    ..base.clone()
                };
                let candidate = ForestParams { imbalance_penalty, ..candidate };
                let forest = fit(x, target, &candidate, seed)?;
                let mut sse = 0.0;
                let mut n_scored = 0usize;
                for (i, t) in target.iter().enumerate() {
                    if let Ok(pred) = forest.predict_oob(i) {
                        sse += (pred - t).powi(2);
                        n_scored += 1;
                    }
                }
                if n_scored == 0 {
                    continue;
                }
                let mse = sse / n_scored as f64;
                if best.as_ref().is_none_or(|(_, b)| mse < *b) {
                    best = Some((candidate, mse));
                }
            }
        }
    }
    best.ok_or_else(|| ForestError::InvalidParams("tuning grid produced no candidate".into()))
}
