//! Shared estimation plumbing: frame enumeration, per-frame two-stage fits,
//! and the seed derivation that keeps every command reproducible and
//! mutually consistent.

use crate::config::RunConfig;
use anyhow::{Context, Result};
use payt_core::causal::{fit_causal_frame, CapeEstimate};
use payt_core::forest::{cross_validate, ForestParams, TuneGrid};
use payt_core::panel::{self, EstimationFrame, LoadOptions, Panel};
use payt_core::derive_seed;
use payt_core::residuals::{residualize, ResidualFrame};

/// Loads the panel, applying the neighbor exclusion when configured.
pub fn load_panel(cfg: &RunConfig) -> Result<Panel> {
    let opts = LoadOptions { require_second_lags: cfg.require_second_lags };
    let panel = panel::load_panel(&cfg.data, &cfg.schema, opts)
        .with_context(|| format!("loading {}", cfg.data.display()))?;
    apply_neighbors(cfg, panel)
}

/// Drops never-treated neighbors of treated units when a neighbor map is
/// configured.
pub fn apply_neighbors(cfg: &RunConfig, panel: Panel) -> Result<Panel> {
    match &cfg.neighbors {
        None => Ok(panel),
        Some(path) => {
            let mut reader = csv::Reader::from_path(path)
                .with_context(|| format!("reading neighbor map {}", path.display()))?;
            let mut edges = Vec::new();
            for record in reader.records() {
                let record = record?;
                let a = record.get(0).unwrap_or("").trim().to_string();
                let b = record.get(1).unwrap_or("").trim().to_string();
                if !a.is_empty() && !b.is_empty() {
                    edges.push((a, b));
                }
            }
            Ok(panel.exclude_neighbors(&edges)?)
        }
    }
}

/// Per-frame seed stream: stable in (outcome, policy year, calendar year), so
/// estimating a subset of frames reproduces exactly what a full run computes.
pub fn frame_seed(cfg: &RunConfig, frame: &EstimationFrame) -> u64 {
    derive_seed(
        cfg.seed,
        &format!(
            "frame-{}-y{}-c{}",
            frame.outcome.name(),
            frame.policy_year,
            frame.calendar_year
        ),
    )
}

/// One fitted frame: residualized nuisances and pointwise estimates for
/// every frame member.
pub struct FrameEstimate {
    pub frame: EstimationFrame,
    pub resid: ResidualFrame,
    pub capes: Vec<CapeEstimate>,
}

/// Resolves nuisance forest parameters, optionally grid-searching on the
/// given frame.
pub fn nuisance_params(cfg: &RunConfig, panel: &Panel, frame: &EstimationFrame) -> Result<ForestParams> {
    if !cfg.tune_nuisance {
        return Ok(cfg.nuisance_forest.clone());
    }
    let x = frame.design(panel);
    let y = frame.outcomes(panel);
    let grid = TuneGrid::default_for(x.ncols());
    let (params, mse) = cross_validate(
        &x,
        &y,
        &cfg.nuisance_forest,
        &grid,
        derive_seed(cfg.seed, "tune"),
    )?;
    eprintln!(
        "tuned nuisance forest: min_leaf={} mtry={} penalty={} (oob mse {mse:.4})",
        params.min_leaf_size, params.mtry, params.imbalance_penalty
    );
    Ok(ForestParams { num_trees: cfg.nuisance_forest.num_trees, ..params })
}

pub fn estimate_frame(
    cfg: &RunConfig,
    panel: &Panel,
    frame: &EstimationFrame,
    nuisance: &ForestParams,
) -> Result<FrameEstimate> {
    let seed = frame_seed(cfg, frame);
    let resid = if cfg.cache_forests {
        residualize_cached(cfg, panel, frame, nuisance, seed)?
    } else {
        residualize(panel, frame, nuisance, nuisance, seed)?
    };
    let x = frame.design(panel);
    let causal =
        fit_causal_frame(&resid, panel, &cfg.causal_forest, derive_seed(seed, "effect"))?;
    let capes: Vec<CapeEstimate> = causal
        .cape_rows(&x)?
        .into_iter()
        .zip(frame.unit_names(panel))
        .map(|(c, unit)| c.with_unit(unit))
        .collect();
    Ok(FrameEstimate { frame: frame.clone(), resid, capes })
}

/// Loads matching serialized nuisance forests when present, otherwise fits
/// and stores them. A cache entry only matches on identical seed, parameters,
/// and frame size, so stale files fall back to a fresh fit.
fn residualize_cached(
    cfg: &RunConfig,
    panel: &Panel,
    frame: &EstimationFrame,
    nuisance: &ForestParams,
    seed: u64,
) -> Result<ResidualFrame> {
    use payt_core::forest::Forest;
    let dir = cfg.out_dir.join("forests");
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create {}", dir.display()))?;
    let key = format!(
        "{}_y{}_c{}",
        frame.outcome.name(),
        frame.policy_year,
        frame.calendar_year
    );
    let path_y = dir.join(format!("{key}_outcome.json"));
    let path_s = dir.join(format!("{key}_price.json"));
    let seed_y = derive_seed(seed, "nuisance-outcome");
    let seed_s = derive_seed(seed, "nuisance-price");
    let usable = |path: &std::path::Path, want_seed: u64| -> Option<Forest> {
        let forest = Forest::load(path).ok()?;
        (forest.rng_seed == want_seed
            && &forest.params == nuisance
            && forest.n_rows() == frame.n())
        .then_some(forest)
    };
    if let (Some(fy), Some(fs)) = (usable(&path_y, seed_y), usable(&path_s, seed_s)) {
        eprintln!("reusing cached nuisance forests for {key}");
        return Ok(payt_core::residuals::residualize_with_forests(panel, frame, fy, fs)?);
    }
    let resid = residualize(panel, frame, nuisance, nuisance, seed)?;
    resid.forest_y.save(&path_y)?;
    resid.forest_s.save(&path_s)?;
    Ok(resid)
}
