//! Panel ingestion, validation, and the staggered-adoption frame construction
//! that matches treated units in a given policy year with never-treated
//! controls observed in the same calendar year.

use crate::matrix::Matrix;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Relative tolerance for the `tw = uw + rw` additivity check.
pub const TW_ADDITIVITY_RTOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: failed to parse `{column}`: {value:?}")]
    ParseFailure { row: usize, column: String, value: String },
    #[error("{0}")]
    Validation(ValidationReport),
    #[error("no treated unit reaches policy year {0}")]
    NoTreatedUnits(u8),
    #[error("no never-treated controls observed in calendar year {0}")]
    EmptyControlGroup(i32),
    #[error("unknown unit id `{0}` in neighbor map")]
    UnknownUnitId(String),
    #[error("duplicate record for unit `{unit}` in year {year}")]
    DuplicateRecord { unit: String, year: i32 },
}

/// One invariant violation tied to a 1-based data row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub row: usize,
    pub rule: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} invariant violation(s)", self.issues.len())?;
        for issue in &self.issues {
            writeln!(f, "row {}: {}", issue.row, issue.rule)?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationReport {}

/// Maps logical fields to CSV column names. `tw` is optional: when absent the
/// total is derived as `uw + rw`. An empty/NA `adoption_year` cell means
/// never-treated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaMap {
    pub unit_id: String,
    pub year: String,
    pub price: String,
    pub uw: String,
    pub rw: String,
    #[serde(default)]
    pub tw: Option<String>,
    pub adoption_year: String,
    #[serde(default)]
    pub pc_uw: Option<String>,
    #[serde(default)]
    pub pc_rw: Option<String>,
    pub covariates: Vec<String>,
}

impl SchemaMap {
    /// Column layout used by the synthetic generator: x1..xd covariates.
    pub fn synthetic(d: usize) -> Self {
        SchemaMap {
            unit_id: "unit_id".into(),
            year: "year".into(),
            price: "price".into(),
            uw: "uw".into(),
            rw: "rw".into(),
            tw: Some("tw".into()),
            adoption_year: "adoption_year".into(),
            pc_uw: Some("pc_uw".into()),
            pc_rw: Some("pc_rw".into()),
            covariates: (1..=d).map(|i| format!("x{i}")).collect(),
        }
    }
}

/// One unit-year observation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PanelRecord {
    /// Index into `Panel::unit_ids`.
    pub unit: u32,
    pub year: i32,
    pub price: f64,
    pub uw: f64,
    pub rw: f64,
    pub tw: f64,
    pub covariates: Vec<f64>,
    pub adoption_year: Option<i32>,
    pub pc_uw: Option<f64>,
    pub pc_rw: Option<f64>,
}

impl PanelRecord {
    pub fn is_treated_in(&self, year: i32) -> bool {
        self.adoption_year.is_some_and(|a| year >= a)
    }
}

/// Outcome selector for estimation frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Uw,
    Rw,
    Tw,
}

impl Outcome {
    pub fn of(&self, rec: &PanelRecord) -> f64 {
        match self {
            Outcome::Uw => rec.uw,
            Outcome::Rw => rec.rw,
            Outcome::Tw => rec.tw,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Outcome::Uw => "uw",
            Outcome::Rw => "rw",
            Outcome::Tw => "tw",
        }
    }

    pub const ALL: [Outcome; 3] = [Outcome::Uw, Outcome::Rw, Outcome::Tw];
}

impl std::str::FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uw" => Ok(Outcome::Uw),
            "rw" => Ok(Outcome::Rw),
            "tw" => Ok(Outcome::Tw),
            other => Err(format!("unknown outcome `{other}` (expected uw, rw, or tw)")),
        }
    }
}

/// Validated unit-year panel. Read-only after construction; cheap to share
/// across parallel tree builders.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Panel {
    pub unit_ids: Vec<String>,
    pub records: Vec<PanelRecord>,
    pub n_covariates: usize,
    pub covariate_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Drop treated units that lack observations in both pre-adoption years
    /// (adoption_year - 1 and adoption_year - 2).
    pub require_second_lags: bool,
}

impl Panel {
    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn unit_name(&self, unit: u32) -> &str {
        &self.unit_ids[unit as usize]
    }

    pub fn unit_index(&self, name: &str) -> Option<u32> {
        self.unit_ids.iter().position(|u| u == name).map(|i| i as u32)
    }

    /// Validates record-level invariants; returns every violation found.
    pub fn validate(records: &[PanelRecord], n_covariates: usize) -> ValidationReport {
        let mut report = ValidationReport::default();
        for (i, rec) in records.iter().enumerate() {
            let row = i + 1;
            let mut push = |rule: String| report.issues.push(ValidationIssue { row, rule });
            if rec.covariates.len() != n_covariates {
                push(format!(
                    "covariate length {} differs from panel width {}",
                    rec.covariates.len(),
                    n_covariates
                ));
            }
            if rec.covariates.iter().any(|v| !v.is_finite()) {
                push("missing or non-finite covariate value".into());
            }
            for (name, v) in [("uw", rec.uw), ("rw", rec.rw), ("tw", rec.tw)] {
                if !v.is_finite() || v < 0.0 {
                    push(format!("outcome {name} must be a non-negative real, got {v}"));
                }
            }
            let scale = rec.tw.abs().max(1.0);
            if (rec.tw - (rec.uw + rec.rw)).abs() > TW_ADDITIVITY_RTOL * scale {
                push(format!(
                    "tw = uw + rw violated beyond relative tolerance {TW_ADDITIVITY_RTOL}: \
                     tw={} uw+rw={}",
                    rec.tw,
                    rec.uw + rec.rw
                ));
            }
            if !rec.price.is_finite() || rec.price < 0.0 {
                push(format!("price must be a non-negative real, got {}", rec.price));
            }
            let post = rec.is_treated_in(rec.year);
            if post && rec.price <= 0.0 {
                push("price must be positive in treated years".into());
            }
            if !post && rec.price != 0.0 {
                push("price must be zero in untreated years".into());
            }
            for (name, v) in [("pc_uw", rec.pc_uw), ("pc_rw", rec.pc_rw)] {
                if let Some(c) = v {
                    if !c.is_finite() || c < 0.0 {
                        push(format!("unit cost {name} must be a non-negative real, got {c}"));
                    }
                }
            }
        }
        report
    }

    /// Builds a panel from in-memory records, enforcing all invariants.
    pub fn from_records(
        unit_ids: Vec<String>,
        records: Vec<PanelRecord>,
        covariate_names: Vec<String>,
        opts: LoadOptions,
    ) -> Result<Panel, DatasetError> {
        let n_covariates = covariate_names.len();
        let report = Panel::validate(&records, n_covariates);
        if !report.issues.is_empty() {
            return Err(DatasetError::Validation(report));
        }
        let mut seen = BTreeSet::new();
        for rec in &records {
            if !seen.insert((rec.unit, rec.year)) {
                return Err(DatasetError::DuplicateRecord {
                    unit: unit_ids[rec.unit as usize].clone(),
                    year: rec.year,
                });
            }
        }
        let mut panel = Panel { unit_ids, records, n_covariates, covariate_names };
        if opts.require_second_lags {
            panel = panel.drop_treated_missing_second_lags();
        }
        Ok(panel)
    }

    /// Removes treated units not observed in both of the two years before
    /// adoption (announcement effects make the first lag unusable, so two
    /// clean pre-years are required).
    fn drop_treated_missing_second_lags(&self) -> Panel {
        let mut years_by_unit: BTreeMap<u32, BTreeSet<i32>> = BTreeMap::new();
        for rec in &self.records {
            years_by_unit.entry(rec.unit).or_default().insert(rec.year);
        }
        let keep_unit = |unit: u32, adoption: Option<i32>| match adoption {
            None => true,
            Some(a) => {
                let years = &years_by_unit[&unit];
                years.contains(&(a - 1)) && years.contains(&(a - 2))
            }
        };
        let mut adoption_by_unit: BTreeMap<u32, Option<i32>> = BTreeMap::new();
        for rec in &self.records {
            adoption_by_unit.entry(rec.unit).or_insert(rec.adoption_year);
        }
        let keep: BTreeSet<u32> = adoption_by_unit
            .iter()
            .filter(|(u, a)| keep_unit(**u, **a))
            .map(|(u, _)| *u)
            .collect();
        self.retain_units(&keep)
    }

    fn retain_units(&self, keep: &BTreeSet<u32>) -> Panel {
        let mut remap: BTreeMap<u32, u32> = BTreeMap::new();
        let mut unit_ids = Vec::new();
        for (old, name) in self.unit_ids.iter().enumerate() {
            let old = old as u32;
            if keep.contains(&old) {
                remap.insert(old, unit_ids.len() as u32);
                unit_ids.push(name.clone());
            }
        }
        let records = self
            .records
            .iter()
            .filter(|r| keep.contains(&r.unit))
            .map(|r| {
                let mut r = r.clone();
                r.unit = remap[&r.unit];
                r
            })
            .collect();
        Panel {
            unit_ids,
            records,
            n_covariates: self.n_covariates,
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// Removes never-treated units adjacent to any treated unit. Edges may be
    /// given in either direction.
    pub fn exclude_neighbors(&self, edges: &[(String, String)]) -> Result<Panel, DatasetError> {
        let mut treated_units = BTreeSet::new();
        for rec in &self.records {
            if rec.adoption_year.is_some() {
                treated_units.insert(rec.unit);
            }
        }
        let mut drop = BTreeSet::new();
        for (a, b) in edges {
            let ia = self
                .unit_index(a)
                .ok_or_else(|| DatasetError::UnknownUnitId(a.clone()))?;
            let ib = self
                .unit_index(b)
                .ok_or_else(|| DatasetError::UnknownUnitId(b.clone()))?;
            if treated_units.contains(&ia) && !treated_units.contains(&ib) {
                drop.insert(ib);
            }
            if treated_units.contains(&ib) && !treated_units.contains(&ia) {
                drop.insert(ia);
            }
        }
        let keep: BTreeSet<u32> =
            (0..self.n_units() as u32).filter(|u| !drop.contains(u)).collect();
        Ok(self.retain_units(&keep))
    }
}

fn parse_f64(field: &str, row: usize, column: &str) -> Result<f64, DatasetError> {
    field.trim().parse::<f64>().map_err(|_| DatasetError::ParseFailure {
        row,
        column: column.to_string(),
        value: field.to_string(),
    })
}

fn is_missing(field: &str) -> bool {
    let t = field.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

/// Loads and validates a CSV panel. All invariant violations are collected and
/// reported together with their 1-based data-row numbers.
pub fn load_panel(
    path: &Path,
    schema: &SchemaMap,
    opts: LoadOptions,
) -> Result<Panel, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let c_unit = col(&schema.unit_id)?;
    let c_year = col(&schema.year)?;
    let c_price = col(&schema.price)?;
    let c_uw = col(&schema.uw)?;
    let c_rw = col(&schema.rw)?;
    let c_tw = schema.tw.as_deref().map(col).transpose()?;
    let c_adopt = col(&schema.adoption_year)?;
    let c_pc_uw = schema.pc_uw.as_deref().map(col).transpose()?;
    let c_pc_rw = schema.pc_rw.as_deref().map(col).transpose()?;
    let c_cov: Vec<usize> =
        schema.covariates.iter().map(|c| col(c)).collect::<Result<_, _>>()?;

    let mut unit_ids: Vec<String> = Vec::new();
    let mut unit_index: BTreeMap<String, u32> = BTreeMap::new();
    let mut records = Vec::new();
    for (i, result) in reader.records().enumerate() {
        let row = i + 1;
        let record = result?;
        let get = |c: usize| record.get(c).unwrap_or("");
        let unit_name = get(c_unit).trim().to_string();
        let unit = *unit_index.entry(unit_name.clone()).or_insert_with(|| {
            unit_ids.push(unit_name.clone());
            (unit_ids.len() - 1) as u32
        });
        let year = get(c_year).trim().parse::<i32>().map_err(|_| DatasetError::ParseFailure {
            row,
            column: schema.year.clone(),
            value: get(c_year).to_string(),
        })?;
        let uw = parse_f64(get(c_uw), row, &schema.uw)?;
        let rw = parse_f64(get(c_rw), row, &schema.rw)?;
        let tw = match c_tw {
            Some(c) => parse_f64(get(c), row, schema.tw.as_deref().unwrap())?,
            None => uw + rw,
        };
        let adoption_year = if is_missing(get(c_adopt)) {
            None
        } else {
            Some(get(c_adopt).trim().parse::<i32>().map_err(|_| {
                DatasetError::ParseFailure {
                    row,
                    column: schema.adoption_year.clone(),
                    value: get(c_adopt).to_string(),
                }
            })?)
        };
        let opt_cost = |c: Option<usize>, name: &Option<String>| -> Result<Option<f64>, DatasetError> {
            match c {
                Some(c) if !is_missing(get(c)) => {
                    Ok(Some(parse_f64(get(c), row, name.as_deref().unwrap())?))
                }
                _ => Ok(None),
            }
        };
        let mut covariates = Vec::with_capacity(c_cov.len());
        for (c, name) in c_cov.iter().zip(&schema.covariates) {
            if is_missing(get(*c)) {
                // surfaced as a validation issue below via NaN
                covariates.push(f64::NAN);
            } else {
                covariates.push(parse_f64(get(*c), row, name)?);
            }
        }
        records.push(PanelRecord {
            unit,
            year,
            price: parse_f64(get(c_price), row, &schema.price)?,
            uw,
            rw,
            tw,
            covariates,
            adoption_year,
            pc_uw: opt_cost(c_pc_uw, &schema.pc_uw)?,
            pc_rw: opt_cost(c_pc_rw, &schema.pc_rw)?,
        });
    }
    Panel::from_records(unit_ids, records, schema.covariates.clone(), opts)
}

/// Writes a panel back to CSV using the shortest round-trip float encoding,
/// so load -> write -> load is lossless for every numeric field.
pub fn write_panel_csv(panel: &Panel, schema: &SchemaMap, path: &Path) -> Result<(), DatasetError> {
    let file = std::fs::File::create(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec![
        schema.unit_id.clone(),
        schema.year.clone(),
        schema.price.clone(),
        schema.uw.clone(),
        schema.rw.clone(),
    ];
    if let Some(tw) = &schema.tw {
        header.push(tw.clone());
    }
    header.push(schema.adoption_year.clone());
    if let Some(c) = &schema.pc_uw {
        header.push(c.clone());
    }
    if let Some(c) = &schema.pc_rw {
        header.push(c.clone());
    }
    header.extend(schema.covariates.iter().cloned());
    w.write_record(&header)?;
    let fmt_opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
    for rec in &panel.records {
        let mut row = vec![
            panel.unit_name(rec.unit).to_string(),
            rec.year.to_string(),
            format!("{}", rec.price),
            format!("{}", rec.uw),
            format!("{}", rec.rw),
        ];
        if schema.tw.is_some() {
            row.push(format!("{}", rec.tw));
        }
        row.push(rec.adoption_year.map_or(String::new(), |y| y.to_string()));
        if schema.pc_uw.is_some() {
            row.push(fmt_opt(rec.pc_uw));
        }
        if schema.pc_rw.is_some() {
            row.push(fmt_opt(rec.pc_rw));
        }
        for v in &rec.covariates {
            row.push(format!("{v}"));
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
    Ok(())
}

/// Writes the line-oriented validation report.
pub fn write_validation_report<W: Write>(report: &ValidationReport, mut out: W) -> std::io::Result<()> {
    write!(out, "{report}")
}

/// Treated units in their k-th policy year matched with the never-treated
/// units observed in the same calendar year. One frame per adoption cohort:
/// calendar_year = adoption_year + k - 1 for every treated member.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimationFrame {
    pub policy_year: u8,
    pub calendar_year: i32,
    pub outcome: Outcome,
    /// Record indices into `Panel::records`, treated units first.
    pub treated_rows: Vec<u32>,
    pub control_rows: Vec<u32>,
}

impl EstimationFrame {
    pub fn n(&self) -> usize {
        self.treated_rows.len() + self.control_rows.len()
    }

    /// Row order used by every aligned vector: treated first, then controls.
    pub fn rows(&self) -> impl Iterator<Item = u32> + '_ {
        self.treated_rows.iter().chain(self.control_rows.iter()).copied()
    }

    pub fn design(&self, panel: &Panel) -> Matrix {
        let mut data = Vec::with_capacity(self.n() * panel.n_covariates);
        for r in self.rows() {
            data.extend_from_slice(&panel.records[r as usize].covariates);
        }
        Matrix::from_vec(self.n(), panel.n_covariates, data)
    }

    pub fn outcomes(&self, panel: &Panel) -> Vec<f64> {
        self.rows().map(|r| self.outcome.of(&panel.records[r as usize])).collect()
    }

    pub fn prices(&self, panel: &Panel) -> Vec<f64> {
        self.rows().map(|r| panel.records[r as usize].price).collect()
    }

    pub fn treated_flags(&self) -> Vec<bool> {
        let mut flags = vec![true; self.treated_rows.len()];
        flags.extend(std::iter::repeat_n(false, self.control_rows.len()));
        flags
    }

    pub fn unit_names<'a>(&'a self, panel: &'a Panel) -> impl Iterator<Item = &'a str> + 'a {
        self.rows().map(|r| panel.unit_name(panel.records[r as usize].unit))
    }
}

/// Builds one frame per adoption cohort reaching policy year `k`. Units that
/// adopt later than a frame's calendar year never enter its control group
/// because controls are restricted to never-treated units.
pub fn build_frames(
    panel: &Panel,
    k: u8,
    outcome: Outcome,
) -> Result<Vec<EstimationFrame>, DatasetError> {
    assert!((1..=3).contains(&k), "policy year index must be in 1..=3");
    let mut by_calendar: BTreeMap<i32, Vec<u32>> = BTreeMap::new();
    for (i, rec) in panel.records.iter().enumerate() {
        if let Some(a) = rec.adoption_year {
            if rec.year == a + i32::from(k) - 1 {
                by_calendar.entry(rec.year).or_default().push(i as u32);
            }
        }
    }
    if by_calendar.is_empty() {
        return Err(DatasetError::NoTreatedUnits(k));
    }
    let mut frames = Vec::new();
    for (calendar_year, treated_rows) in by_calendar {
        let control_rows: Vec<u32> = panel
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.adoption_year.is_none() && r.year == calendar_year)
            .map(|(i, _)| i as u32)
            .collect();
        if control_rows.is_empty() {
            return Err(DatasetError::EmptyControlGroup(calendar_year));
        }
        frames.push(EstimationFrame {
            policy_year: k,
            calendar_year,
            outcome,
            treated_rows,
            control_rows,
        });
    }
    Ok(frames)
}

/// Single-cohort variant of [`build_frames`].
pub fn build_frame(
    panel: &Panel,
    k: u8,
    calendar_year: i32,
    outcome: Outcome,
) -> Result<EstimationFrame, DatasetError> {
    build_frames(panel, k, outcome)?
        .into_iter()
        .find(|f| f.calendar_year == calendar_year)
        .ok_or(DatasetError::NoTreatedUnits(k))
}
