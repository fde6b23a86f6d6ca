//! Synthetic staggered-panel generator with known nuisances and dose
//! responses. Every estimator in the crate is validated against panels from
//! here, scored with the emitted truth manifest.

use crate::panel::{LoadOptions, Panel, PanelRecord};
use crate::stats;
use crate::{derive_seed, stream_rng};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DgpError {
    #[error("invalid generator spec: {0}")]
    SpecInvalid(String),
    #[error("generated panel failed validation: {0}")]
    Panel(#[from] crate::panel::DatasetError),
    #[error("io error for {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Dose-response shape. `delta` is the marginal effect of price on the
/// outcome (outcome units per price unit), constant over a unit's years.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum DeltaSpec {
    Constant { uw: f64, rw: f64 },
    /// delta = base + slope * x1
    LinearX1 { uw_base: f64, uw_slope: f64, rw_base: f64, rw_slope: f64 },
    /// Flat at `low` until the expected price passes `kink_price`, then a
    /// linear ramp towards `high` at the top of the price range.
    KinkedPrice { uw_low: f64, uw_high: f64, rw_low: f64, rw_high: f64, kink_price: f64 },
}

/// Price assignment. `confounding` in [0, 1] mixes a covariate-driven level
/// (through the same index that drives adoption and outcomes) with an
/// independent uniform draw; 0 gives randomized prices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriceSpec {
    pub min: f64,
    pub max: f64,
    pub confounding: f64,
    pub noise: f64,
}

/// Untreated-outcome surface: y0 = base + x1_weight * x1 + x2_weight * x2,
/// plus a common year effect.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OutcomeSpec {
    pub uw_base: f64,
    pub rw_base: f64,
    pub uw_x1: f64,
    pub uw_x2: f64,
    pub rw_x1: f64,
    pub rw_x2: f64,
    pub year_effect: f64,
}

/// Unit management costs and an optional policy effect on them, applied to
/// treated post-adoption records for units with x1 above the threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CostSpec {
    pub pc_uw_base: f64,
    pub pc_rw_base: f64,
    pub pc_sd: f64,
    pub policy_effect_uw: f64,
    pub policy_effect_rw: f64,
    pub effect_x1_threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n_units: usize,
    pub first_year: i32,
    pub n_years: usize,
    pub d: usize,
    /// adoption year -> cohort size
    pub cohort_sizes: BTreeMap<i32, usize>,
    pub delta: DeltaSpec,
    pub price: PriceSpec,
    pub outcome: OutcomeSpec,
    pub noise_sd_uw: f64,
    pub noise_sd_rw: f64,
    /// Covariate weight in adoption selection; None reuses the price
    /// confounding so selection and price levels move together.
    #[serde(default)]
    pub adoption_confounding: Option<f64>,
    /// Append the previous year's unsorted outcome as an extra covariate
    /// column (`uw_lag`); rows in the first panel year carry their own value.
    #[serde(default)]
    pub lag_covariate: bool,
    /// Strength of a unit time trend tied to the adoption index; nonzero
    /// values violate parallel trends while staying a function of observables.
    pub trend_confounding: f64,
    pub cost: Option<CostSpec>,
    /// Share of never-treated units flagged as neighbors of treated units.
    pub neighbor_share: f64,
    pub seed: u64,
}

/// Per-record truths: the observed outcome decomposes exactly as
/// y = y0 + price * delta + noise with the stored fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRow {
    pub unit_id: String,
    pub year: i32,
    pub treated: bool,
    pub adoption_year: Option<i32>,
    pub price: f64,
    pub price_expected: f64,
    pub delta_uw: f64,
    pub delta_rw: f64,
    pub delta_tw: f64,
    pub y0_uw: f64,
    pub y0_rw: f64,
    pub y0_tw: f64,
    pub noise_uw: f64,
    pub noise_rw: f64,
    pub noise_tw: f64,
}

#[derive(Debug, Clone)]
pub struct GeneratedPanel {
    pub panel: Panel,
    pub manifest: Vec<ManifestRow>,
    /// Unit ids of never-treated units flagged as neighbors of treated units.
    pub neighbor_edges: Vec<(String, String)>,
}

impl DgpSpec {
    fn validate(&self) -> Result<(), DgpError> {
        if self.n_units == 0 || self.n_years == 0 {
            return Err(DgpError::SpecInvalid("need units and years".into()));
        }
        if self.d < 2 {
            return Err(DgpError::SpecInvalid("need at least two covariates (x1, x2)".into()));
        }
        let total: usize = self.cohort_sizes.values().sum();
        if total > self.n_units {
            return Err(DgpError::SpecInvalid(format!(
                "cohort sizes sum to {total} > n_units {}",
                self.n_units
            )));
        }
        if !(self.price.min > 0.0 && self.price.max <= 0.18 && self.price.min <= self.price.max) {
            return Err(DgpError::SpecInvalid(
                "prices must satisfy 0 < min <= max <= 0.18".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.price.confounding) {
            return Err(DgpError::SpecInvalid("confounding must lie in [0, 1]".into()));
        }
        if let Some(a) = self.adoption_confounding {
            if !(0.0..=1.0).contains(&a) {
                return Err(DgpError::SpecInvalid(
                    "adoption_confounding must lie in [0, 1]".into(),
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.neighbor_share) {
            return Err(DgpError::SpecInvalid("neighbor_share must lie in [0, 1]".into()));
        }
        let last = self.first_year + self.n_years as i32 - 1;
        for year in self.cohort_sizes.keys() {
            if *year < self.first_year || *year > last {
                return Err(DgpError::SpecInvalid(format!(
                    "cohort year {year} outside panel range {}..={last}",
                    self.first_year
                )));
            }
        }
        Ok(())
    }

    fn delta_for(&self, x1: f64, price_expected: f64) -> (f64, f64) {
        match &self.delta {
            DeltaSpec::Constant { uw, rw } => (*uw, *rw),
            DeltaSpec::LinearX1 { uw_base, uw_slope, rw_base, rw_slope } => {
                (uw_base + uw_slope * x1, rw_base + rw_slope * x1)
            }
            DeltaSpec::KinkedPrice { uw_low, uw_high, rw_low, rw_high, kink_price } => {
                if price_expected <= *kink_price || self.price.max <= *kink_price {
                    (*uw_low, *rw_low)
                } else {
                    let frac = (price_expected - kink_price) / (self.price.max - kink_price);
                    (uw_low + (uw_high - uw_low) * frac, rw_low + (rw_high - rw_low) * frac)
                }
            }
        }
    }
}

struct UnitDraw {
    covariates: Vec<f64>,
    eta: f64,
    v_price: f64,
    price_jitter: f64,
    cost_shift: f64,
    noises: Vec<(f64, f64)>, // per year (uw, rw)
}

/// Generates the panel and its truth manifest. Two calls with the same spec
/// are bit-identical.
pub fn generate(spec: &DgpSpec) -> Result<GeneratedPanel, DgpError> {
    spec.validate()?;
    let n = spec.n_units;
    let unit_seed = derive_seed(spec.seed, "unit");
    let normal = Normal::new(0.0, 1.0).expect("standard normal");

    // draw everything up front so membership decisions cannot disturb streams
    let draws: Vec<UnitDraw> = (0..n)
        .map(|i| {
            let mut rng = stream_rng(unit_seed, i as u64);
            let covariates: Vec<f64> = (0..spec.d).map(|_| normal.sample(&mut rng)).collect();
            let eta: f64 = normal.sample(&mut rng);
            let v_price: f64 = rng.random_range(0.0..1.0);
            let price_jitter: f64 = rng.random_range(-1.0..1.0);
            let cost_shift: f64 = normal.sample(&mut rng);
            let noises: Vec<(f64, f64)> = (0..spec.n_years)
                .map(|_| {
                    (
                        spec.noise_sd_uw * normal.sample(&mut rng),
                        spec.noise_sd_rw * normal.sample(&mut rng),
                    )
                })
                .collect();
            UnitDraw { covariates, eta, v_price, price_jitter, cost_shift, noises }
        })
        .collect();

    // adoption index: the first covariate drives adoption, prices, and
    // (optionally) trends; axis-aligned so tree ensembles can absorb it
    let z_index = |d: &UnitDraw| d.covariates[0];
    let conf = spec.price.confounding;
    let adoption_conf = spec.adoption_confounding.unwrap_or(conf);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let sa = adoption_conf * z_index(&draws[a]) + (1.0 - adoption_conf) * draws[a].eta;
        let sb = adoption_conf * z_index(&draws[b]) + (1.0 - adoption_conf) * draws[b].eta;
        sb.partial_cmp(&sa).unwrap().then(a.cmp(&b))
    });
    let total_treated: usize = spec.cohort_sizes.values().sum();
    let mut treated_units: Vec<usize> = order[..total_treated].to_vec();
    treated_units.sort_unstable();
    {
        use rand::seq::SliceRandom;
        let mut rng = stream_rng(derive_seed(spec.seed, "cohort"), 0);
        treated_units.shuffle(&mut rng);
    }
    let mut adoption: BTreeMap<usize, i32> = BTreeMap::new();
    let mut cursor = 0usize;
    for (year, count) in &spec.cohort_sizes {
        for &u in &treated_units[cursor..cursor + count] {
            adoption.insert(u, *year);
        }
        cursor += count;
    }

    let price_span = spec.price.max - spec.price.min;
    let mut unit_ids = Vec::with_capacity(n);
    let mut records = Vec::new();
    let mut manifest = Vec::new();
    for (i, draw) in draws.iter().enumerate() {
        let unit_id = format!("u{i:05}");
        unit_ids.push(unit_id.clone());
        let z = z_index(draw);
        let u_level = conf * stats::norm_cdf(z) + (1.0 - conf) * draw.v_price;
        let price_base = spec.price.min + price_span * u_level;
        let price_level = (price_base + draw.price_jitter * spec.price.noise)
            .clamp(spec.price.min, spec.price.max);
        let price_expected =
            spec.price.min + price_span * (conf * stats::norm_cdf(z) + (1.0 - conf) * 0.5);
        let (delta_uw, delta_rw) = spec.delta_for(draw.covariates[0], price_expected);
        let adoption_year = adoption.get(&i).copied();
        let x1 = draw.covariates[0];
        let x2 = draw.covariates[1];
        let mut prev_uw: Option<f64> = None;
        for t in 0..spec.n_years {
            let year = spec.first_year + t as i32;
            let post = adoption_year.is_some_and(|a| year >= a);
            let price = if post { price_level } else { 0.0 };
            let elapsed = t as f64;
            let trend = spec.trend_confounding * z * elapsed;
            let y0_uw = spec.outcome.uw_base
                + spec.outcome.uw_x1 * x1
                + spec.outcome.uw_x2 * x2
                + spec.outcome.year_effect * elapsed
                + trend;
            let y0_rw = spec.outcome.rw_base
                + spec.outcome.rw_x1 * x1
                + spec.outcome.rw_x2 * x2
                + spec.outcome.year_effect * elapsed
                + trend;
            let (noise_uw, noise_rw) = draw.noises[t];
            let uw = y0_uw + price * delta_uw + noise_uw;
            let rw = y0_rw + price * delta_rw + noise_rw;
            if uw < 0.0 || rw < 0.0 {
                return Err(DgpError::SpecInvalid(format!(
                    "outcome went negative for unit {i} year {year} (uw={uw:.2}, rw={rw:.2}); \
                     raise bases or shrink effects"
                )));
            }
            let tw = uw + rw;
            let y0_tw = y0_uw + y0_rw;
            let delta_tw = delta_uw + delta_rw;
            // defined so tw == y0_tw + price * delta_tw + noise_tw holds exactly
            let noise_tw = tw - y0_tw - price * delta_tw;
            let (pc_uw, pc_rw) = match &spec.cost {
                None => (None, None),
                Some(c) => {
                    let base_u = (c.pc_uw_base + c.pc_sd * draw.cost_shift).max(0.01);
                    let base_r = (c.pc_rw_base + 0.5 * c.pc_sd * draw.cost_shift).max(0.01);
                    let hit = post && x1 > c.effect_x1_threshold;
                    let eff_u = if hit { c.policy_effect_uw } else { 0.0 };
                    let eff_r = if hit { c.policy_effect_rw } else { 0.0 };
                    (Some((base_u + eff_u).max(0.0)), Some((base_r + eff_r).max(0.0)))
                }
            };
            let mut covariates = draw.covariates.clone();
            if spec.lag_covariate {
                covariates.push(prev_uw.unwrap_or(uw));
            }
            prev_uw = Some(uw);
            records.push(PanelRecord {
                unit: i as u32,
                year,
                price,
                uw,
                rw,
                tw,
                covariates,
                adoption_year,
                pc_uw,
                pc_rw,
            });
            manifest.push(ManifestRow {
                unit_id: unit_id.clone(),
                year,
                treated: adoption_year.is_some(),
                adoption_year,
                price,
                price_expected,
                delta_uw,
                delta_rw,
                delta_tw,
                y0_uw,
                y0_rw,
                y0_tw,
                noise_uw,
                noise_rw,
                noise_tw,
            });
        }
    }

    // neighbor flags: the first share of never-treated units (by id) border a
    // treated unit
    let mut neighbor_edges = Vec::new();
    if spec.neighbor_share > 0.0 && !treated_units.is_empty() {
        let controls: Vec<usize> =
            (0..n).filter(|u| !adoption.contains_key(u)).collect();
        let flagged = ((controls.len() as f64) * spec.neighbor_share).round() as usize;
        let anchor = unit_ids[*treated_units.iter().min().unwrap()].clone();
        for &u in controls.iter().take(flagged) {
            neighbor_edges.push((anchor.clone(), unit_ids[u].clone()));
        }
    }

    let mut covariate_names: Vec<String> = (1..=spec.d).map(|j| format!("x{j}")).collect();
    if spec.lag_covariate {
        covariate_names.push("uw_lag".into());
    }
    let panel = Panel::from_records(unit_ids, records, covariate_names, LoadOptions::default())?;
    Ok(GeneratedPanel { panel, manifest, neighbor_edges })
}

/// Writes the truth manifest next to the panel CSV.
pub fn write_manifest_csv(manifest: &[ManifestRow], path: &Path) -> Result<(), DgpError> {
    let file = std::fs::File::create(path)
        .map_err(|source| DgpError::Io { path: path.display().to_string(), source })?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record([
        "unit_id",
        "year",
        "treated",
        "adoption_year",
        "price",
        "price_expected",
        "delta_uw",
        "delta_rw",
        "delta_tw",
        "y0_uw",
        "y0_rw",
        "y0_tw",
        "noise_uw",
        "noise_rw",
        "noise_tw",
    ])?;
    for row in manifest {
        w.write_record(&[
            row.unit_id.clone(),
            row.year.to_string(),
            (row.treated as u8).to_string(),
            row.adoption_year.map_or(String::new(), |y| y.to_string()),
            format!("{}", row.price),
            format!("{}", row.price_expected),
            format!("{}", row.delta_uw),
            format!("{}", row.delta_rw),
            format!("{}", row.delta_tw),
            format!("{}", row.y0_uw),
            format!("{}", row.y0_rw),
            format!("{}", row.y0_tw),
            format!("{}", row.noise_uw),
            format!("{}", row.noise_rw),
            format!("{}", row.noise_tw),
        ])?;
    }
    w.flush().map_err(|source| DgpError::Io { path: path.display().to_string(), source })?;
    Ok(())
}

fn single_cohort(year: i32, count: usize) -> BTreeMap<i32, usize> {
    let mut m = BTreeMap::new();
    m.insert(year, count);
    m
}

/// Canonical specs used across the test and benchmark suites.
impl DgpSpec {
    /// Staggered cohorts sized like a mid-2010s adoption wave; moderate
    /// covariate-driven selection.
    pub fn staggered_default(n_units: usize, seed: u64) -> DgpSpec {
        let mut cohort_sizes = BTreeMap::new();
        for (year, count) in [(2012, 48), (2013, 77), (2014, 36), (2015, 33)] {
            cohort_sizes.insert(year, count);
        }
        DgpSpec {
            n_units,
            first_year: 2010,
            n_years: 6,
            d: 10,
            cohort_sizes,
            delta: DeltaSpec::Constant { uw: -1150.0, rw: 810.0 },
            price: PriceSpec { min: 0.01, max: 0.18, confounding: 0.3, noise: 0.01 },
            outcome: OutcomeSpec {
                uw_base: 320.0,
                rw_base: 290.0,
                uw_x1: 8.0,
                uw_x2: 12.0,
                rw_x1: 5.0,
                rw_x2: -6.0,
                year_effect: 1.5,
            },
            noise_sd_uw: 6.0,
            noise_sd_rw: 6.0,
            adoption_confounding: None,
            lag_covariate: false,
            trend_confounding: 0.0,
            cost: Some(CostSpec {
                pc_uw_base: 0.29,
                pc_rw_base: 0.16,
                pc_sd: 0.05,
                policy_effect_uw: 0.14,
                policy_effect_rw: 0.0,
                effect_x1_threshold: 0.5,
            }),
            neighbor_share: 0.0,
            seed,
        }
    }

    /// Heterogeneous dose response delta_uw(x) = 2 + x1 on a single-cohort
    /// cross-section with randomized prices; half the units are treated.
    pub fn heterogeneous(n_units: usize, d: usize, seed: u64) -> DgpSpec {
        DgpSpec {
            n_units,
            first_year: 2012,
            n_years: 1,
            d,
            cohort_sizes: single_cohort(2012, n_units / 2),
            delta: DeltaSpec::LinearX1 { uw_base: 2.0, uw_slope: 1.0, rw_base: 1.0, rw_slope: 0.0 },
            price: PriceSpec { min: 0.01, max: 0.18, confounding: 0.0, noise: 0.0 },
            outcome: OutcomeSpec {
                uw_base: 40.0,
                rw_base: 40.0,
                uw_x1: 0.0,
                uw_x2: 1.0,
                rw_x1: 0.5,
                rw_x2: 0.5,
                year_effect: 0.0,
            },
            noise_sd_uw: 0.10,
            noise_sd_rw: 0.10,
            adoption_confounding: None,
            lag_covariate: false,
            trend_confounding: 0.0,
            cost: None,
            neighbor_share: 0.0,
            seed,
        }
    }

    /// Constant effect everywhere; used for null calibration and coverage.
    pub fn null_effect(n_units: usize, d: usize, seed: u64) -> DgpSpec {
        DgpSpec {
            delta: DeltaSpec::Constant { uw: 2.5, rw: 1.0 },
            ..DgpSpec::heterogeneous(n_units, d, seed)
        }
    }

    /// Joint outcome generation with heterogeneous responses in both waste
    /// streams; used for cross-outcome additivity checks.
    pub fn joint_outcomes(n_units: usize, seed: u64) -> DgpSpec {
        DgpSpec {
            delta: DeltaSpec::LinearX1 {
                uw_base: -60.0,
                uw_slope: -12.0,
                rw_base: 45.0,
                rw_slope: 8.0,
            },
            outcome: OutcomeSpec {
                uw_base: 80.0,
                rw_base: 70.0,
                uw_x1: 2.0,
                uw_x2: 3.0,
                rw_x1: 1.0,
                rw_x2: 2.0,
                year_effect: 0.0,
            },
            noise_sd_uw: 1.0,
            noise_sd_rw: 1.0,
            ..DgpSpec::heterogeneous(n_units, 10, seed)
        }
    }

    /// Price tied monotonically to x1 with a dose response calibrated so the
    /// point elasticity at band means is about -0.26 in the lowest price
    /// quartile and about -2.2 in the highest.
    pub fn quartile_elasticity(n_units: usize, seed: u64) -> DgpSpec {
        // price = 0.01 + 0.17 * Phi(z); with y0 = 500 the band targets solve
        // delta = eps * y0 / (p_band * (1 - eps))
        DgpSpec {
            delta: DeltaSpec::KinkedPrice {
                uw_low: -3301.0,
                uw_high: -1029.0,
                rw_low: 900.0,
                rw_high: 900.0,
                kink_price: 0.1375,
            },
            price: PriceSpec { min: 0.01, max: 0.18, confounding: 1.0, noise: 0.0 },
            adoption_confounding: Some(0.0),
            outcome: OutcomeSpec {
                uw_base: 500.0,
                rw_base: 300.0,
                uw_x1: 0.0,
                uw_x2: 0.0,
                rw_x1: 0.0,
                rw_x2: 0.0,
                year_effect: 0.0,
            },
            noise_sd_uw: 2.0,
            noise_sd_rw: 2.0,
            ..DgpSpec::heterogeneous(n_units, 10, seed)
        }
    }

    /// Third-policy-year cost geometry: large unsorted reductions, moderate
    /// recycling increases, and a policy effect on unsorted unit costs in a
    /// known subgroup.
    pub fn welfare_year3(n_units: usize, seed: u64) -> DgpSpec {
        DgpSpec {
            n_units,
            first_year: 2012,
            n_years: 3,
            d: 10,
            cohort_sizes: single_cohort(2012, (n_units * 2) / 5),
            delta: DeltaSpec::LinearX1 {
                uw_base: -1200.0,
                uw_slope: -100.0,
                rw_base: 1000.0,
                rw_slope: 60.0,
            },
            price: PriceSpec { min: 0.03, max: 0.13, confounding: 0.2, noise: 0.01 },
            outcome: OutcomeSpec {
                uw_base: 330.0,
                rw_base: 290.0,
                uw_x1: 6.0,
                uw_x2: 10.0,
                rw_x1: 4.0,
                rw_x2: -5.0,
                year_effect: 1.0,
            },
            noise_sd_uw: 4.0,
            noise_sd_rw: 4.0,
            adoption_confounding: None,
            lag_covariate: false,
            trend_confounding: 0.0,
            cost: Some(CostSpec {
                pc_uw_base: 0.29,
                pc_rw_base: 0.16,
                pc_sd: 0.04,
                policy_effect_uw: 0.14,
                policy_effect_rw: 0.0,
                effect_x1_threshold: 0.5,
            }),
            neighbor_share: 0.0,
            seed,
        }
    }

    /// Staggered adoption with selection on an observable trend index:
    /// adopters drift upward before adoption, violating parallel trends while
    /// remaining a function of covariates.
    pub fn confounded_trends(n_units: usize, seed: u64) -> DgpSpec {
        let mut spec = DgpSpec::parallel_trends(n_units, seed);
        // adoption selects on the trend index while price levels stay
        // randomized; the trend violates parallel trends but remains a
        // function of observed covariates
        spec.price.confounding = 0.0;
        spec.adoption_confounding = Some(0.3);
        spec.trend_confounding = 4.0;
        // the trend is absorbed through the lagged outcome, as in panels
        // where pre-policy outcomes proxy time-varying heterogeneity
        spec.lag_covariate = true;
        spec
    }

    /// Same shape with clean parallel trends and randomized adoption.
    pub fn parallel_trends(n_units: usize, seed: u64) -> DgpSpec {
        let quarter = n_units / 16;
        let mut cohort_sizes = BTreeMap::new();
        for year in [2012, 2013, 2014, 2015] {
            cohort_sizes.insert(year, quarter);
        }
        DgpSpec {
            n_units,
            first_year: 2010,
            n_years: 6,
            d: 6,
            cohort_sizes,
            delta: DeltaSpec::Constant { uw: -1150.0, rw: 810.0 },
            price: PriceSpec { min: 0.01, max: 0.18, confounding: 0.0, noise: 0.01 },
            outcome: OutcomeSpec {
                uw_base: 320.0,
                rw_base: 290.0,
                uw_x1: 6.0,
                uw_x2: 9.0,
                rw_x1: 4.0,
                rw_x2: -4.0,
                year_effect: 1.5,
            },
            noise_sd_uw: 5.0,
            noise_sd_rw: 5.0,
            adoption_confounding: None,
            lag_covariate: false,
            trend_confounding: 0.0,
            cost: None,
            neighbor_share: 0.0,
            seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{build_frames, Outcome};

    #[test]
    fn cohort_counts_flow_into_frames() {
        let spec = DgpSpec::staggered_default(500, 42);
        let g = generate(&spec).unwrap();
        let treated_units: usize = g
            .panel
            .records
            .iter()
            .filter(|r| r.adoption_year == Some(r.year))
            .count();
        assert_eq!(treated_units, 194);
        let count_k = |k: u8| -> usize {
            build_frames(&g.panel, k, Outcome::Uw)
                .unwrap()
                .iter()
                .map(|f| f.treated_rows.len())
                .sum()
        };
        assert_eq!(count_k(1), 194);
        assert_eq!(count_k(2), 161); // the 2015 cohort has no second policy year by 2015
        assert_eq!(count_k(3), 125); // 2014 and 2015 cohorts drop out
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = DgpSpec::heterogeneous(120, 5, 7);
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(
            serde_json::to_string(&a.panel).unwrap(),
            serde_json::to_string(&b.panel).unwrap()
        );
        let c = generate(&DgpSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(
            serde_json::to_string(&a.panel).unwrap(),
            serde_json::to_string(&c.panel).unwrap()
        );
    }

    #[test]
    fn manifest_decomposition_is_exact() {
        let spec = DgpSpec::staggered_default(300, 3);
        let g = generate(&spec).unwrap();
        for (rec, row) in g.panel.records.iter().zip(&g.manifest) {
            // outcomes are built as y0 + price * delta + noise, so the forward
            // identity is bitwise for the two generated streams
            assert_eq!(rec.uw, row.y0_uw + rec.price * row.delta_uw + row.noise_uw);
            assert_eq!(rec.rw, row.y0_rw + rec.price * row.delta_rw + row.noise_rw);
            // the total's noise is defined as the re-derived residual, so
            // residualizing against the manifest reproduces it bitwise
            assert_eq!(rec.tw - row.y0_tw - rec.price * row.delta_tw, row.noise_tw);
            let rebuilt = row.y0_tw + rec.price * row.delta_tw + row.noise_tw;
            assert!((rebuilt - rec.tw).abs() <= 1e-9 * rec.tw.abs());
        }
    }

    #[test]
    fn noiseless_constant_effect_decomposes_to_zero_noise() {
        let mut spec = DgpSpec::heterogeneous(60, 4, 11);
        spec.noise_sd_uw = 0.0;
        spec.noise_sd_rw = 0.0;
        spec.delta = DeltaSpec::Constant { uw: 3.0, rw: 1.5 };
        let g = generate(&spec).unwrap();
        for row in &g.manifest {
            assert_eq!(row.noise_uw, 0.0);
            assert_eq!(row.noise_rw, 0.0);
        }
    }

    #[test]
    fn prices_are_zero_pre_adoption_and_constant_after() {
        let spec = DgpSpec::staggered_default(400, 9);
        let g = generate(&spec).unwrap();
        let mut post_price: BTreeMap<u32, f64> = BTreeMap::new();
        for rec in &g.panel.records {
            match rec.adoption_year {
                None => assert_eq!(rec.price, 0.0),
                Some(a) if rec.year < a => assert_eq!(rec.price, 0.0),
                Some(_) => {
                    assert!(rec.price >= 0.01 && rec.price <= 0.18);
                    let seen = post_price.entry(rec.unit).or_insert(rec.price);
                    assert_eq!(*seen, rec.price, "price changed across post years");
                }
            }
        }
    }

    #[test]
    fn neighbor_flags_cover_requested_share() {
        let mut spec = DgpSpec::staggered_default(400, 5);
        spec.neighbor_share = 0.1;
        let g = generate(&spec).unwrap();
        let n_controls = 400 - 194;
        assert_eq!(g.neighbor_edges.len(), (n_controls as f64 * 0.1).round() as usize);
        let filtered = g.panel.exclude_neighbors(&g.neighbor_edges).unwrap();
        assert_eq!(filtered.n_units(), 400 - g.neighbor_edges.len());
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let mut spec = DgpSpec::heterogeneous(10, 4, 1);
        spec.cohort_sizes = single_cohort(2012, 11);
        assert!(matches!(generate(&spec), Err(DgpError::SpecInvalid(_))));
        let mut spec = DgpSpec::heterogeneous(10, 4, 1);
        spec.price.max = 0.25;
        assert!(matches!(generate(&spec), Err(DgpError::SpecInvalid(_))));
    }
}
