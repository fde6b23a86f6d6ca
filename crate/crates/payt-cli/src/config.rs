//! Run configuration: one JSON file drives every subcommand, with a handful
//! of flag overrides. All randomness flows from the single `seed` field, so
//! identical configs give byte-identical outputs.

use anyhow::{bail, Context, Result};
use payt_core::causal::CausalForestParams;
use payt_core::costs::CostParams;
use payt_core::forest::ForestParams;
use payt_core::overlap::OverlapOptions;
use payt_core::panel::{Outcome, SchemaMap};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

fn default_policy_years() -> Vec<u8> {
    vec![1, 2, 3]
}

fn default_outcomes() -> Vec<Outcome> {
    vec![Outcome::Uw, Outcome::Rw, Outcome::Tw]
}

fn default_ape_bootstrap() -> usize {
    1000
}

fn default_true() -> bool {
    true
}

fn default_het_policy_year() -> u8 {
    3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Input panel CSV.
    pub data: PathBuf,
    pub schema: SchemaMap,
    pub out_dir: PathBuf,
    /// Root seed; every stage derives its own stream from it.
    pub seed: u64,
    /// 0 lets the runtime pick; any value must reproduce identical output.
    #[serde(default)]
    pub threads: usize,
    #[serde(default = "default_policy_years")]
    pub policy_years: Vec<u8>,
    #[serde(default = "default_outcomes")]
    pub outcomes: Vec<Outcome>,
    #[serde(default)]
    pub nuisance_forest: ForestParams,
    #[serde(default)]
    pub causal_forest: CausalForestParams,
    #[serde(default)]
    pub costs: CostParams,
    /// Zero out insignificant pointwise effects when scaling to price levels.
    #[serde(default = "default_true")]
    pub significance_filter: bool,
    /// Optional CSV of neighbor edges (two columns of unit ids); listed
    /// never-treated neighbors of treated units are dropped before anything
    /// else runs.
    #[serde(default)]
    pub neighbors: Option<PathBuf>,
    /// Drop treated units lacking both pre-adoption years.
    #[serde(default)]
    pub require_second_lags: bool,
    /// Diagnose per calendar year instead of pooling a policy year's frames.
    #[serde(default)]
    pub per_year_gps: bool,
    /// Grid-search nuisance parameters by out-of-sample error on the first
    /// frame before estimating.
    #[serde(default)]
    pub tune_nuisance: bool,
    /// Reuse serialized nuisance forests from `<out_dir>/forests/` when the
    /// stored seed and parameters match; fit and save them otherwise.
    #[serde(default)]
    pub cache_forests: bool,
    #[serde(default = "default_ape_bootstrap")]
    pub ape_bootstrap: usize,
    /// Feature columns for the linear projection of pointwise effects.
    #[serde(default)]
    pub blp_features: Vec<String>,
    /// Policy year used by elasticity and projection summaries.
    #[serde(default = "default_het_policy_year")]
    pub heterogeneity_policy_year: u8,
    #[serde(default)]
    pub overlap: OverlapOptions,
    /// diagnose exits nonzero when a caliper share falls below this floor.
    #[serde(default)]
    pub min_caliper_share: f64,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("cannot parse config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.data.exists() {
            bail!("data file {} does not exist", self.data.display());
        }
        if let Some(n) = &self.neighbors {
            if !n.exists() {
                bail!("neighbor file {} does not exist", n.display());
            }
        }
        if self.schema.covariates.is_empty() {
            bail!("schema must list at least one covariate column");
        }
        if self.policy_years.is_empty()
            || self.policy_years.iter().any(|k| !(1..=3).contains(k))
        {
            bail!("policy_years must be a non-empty subset of 1..=3");
        }
        if self.outcomes.is_empty() {
            bail!("outcomes must be non-empty");
        }
        Ok(())
    }

    /// Default config for a synthetic panel written by the generator.
    pub fn for_synthetic(data: PathBuf, out_dir: PathBuf, d: usize, seed: u64) -> RunConfig {
        RunConfig {
            data,
            schema: SchemaMap::synthetic(d),
            out_dir,
            seed,
            threads: 0,
            policy_years: default_policy_years(),
            outcomes: default_outcomes(),
            nuisance_forest: ForestParams {
                num_trees: 400,
                min_leaf_size: 10,
                ..ForestParams::default()
            },
            causal_forest: CausalForestParams {
                forest: ForestParams {
                    num_trees: 1000,
                    min_leaf_size: 10,
                    ..ForestParams::default()
                },
                ..CausalForestParams::default()
            },
            costs: CostParams::default(),
            significance_filter: true,
            neighbors: None,
            require_second_lags: false,
            per_year_gps: false,
            tune_nuisance: false,
            cache_forests: false,
            ape_bootstrap: default_ape_bootstrap(),
            blp_features: vec!["x1".into(), "x2".into()],
            heterogeneity_policy_year: 3,
            overlap: OverlapOptions::default(),
            min_caliper_share: 0.0,
        }
    }
}
