//! Specification grids and composition checks.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::characteristics::CharacteristicsTable;
use crate::donor::{filter_donors, DonorCriteria};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate, residualize_covariates, EstimateResult, EstimatorConfig, Method,
};
use crate::inference::{
    infer_allowing_zero_spread, placebo_distribution, InferenceMode, InferenceResult, PlaceboScheme,
};
use crate::panel::Panel;

/// Two-sided significance level for flags.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolSource {
    /// Donors selected from the characteristics table.
    Criteria(DonorCriteria),
    /// A fixed donor list.
    Units(Vec<String>),
    /// Every untreated unit of the outcome panel.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonorPoolVariant {
    pub name: String,
    pub source: PoolSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecGrid {
    pub method: Method,
    pub inference: InferenceMode,
    pub estimator: EstimatorConfig,
    pub scheme: PlaceboScheme,
    pub donor_pools: Vec<DonorPoolVariant>,
    /// First included period of each variant; `None` keeps the full panel.
    pub pre_period_starts: Vec<Option<i64>>,
    /// Covariate toggle values to enumerate.
    pub covariates: Vec<bool>,
    pub covariate_columns: Vec<String>,
    /// Keys into the outcome panel set.
    pub outcomes: Vec<String>,
}

impl SpecGrid {
    /// A grid with one value per axis.
    pub fn single(outcome: &str, method: Method) -> Self {
        SpecGrid {
            method,
            inference: InferenceMode::GaussianPlacebo,
            estimator: EstimatorConfig::default(),
            scheme: PlaceboScheme::LeaveTreatedOut,
            donor_pools: vec![DonorPoolVariant {
                name: "all".into(),
                source: PoolSource::All,
            }],
            pre_period_starts: vec![None],
            covariates: vec![false],
            covariate_columns: Vec::new(),
            outcomes: vec![outcome.to_string()],
        }
    }

    pub fn n_cells(&self) -> usize {
        self.donor_pools.len()
            * self.pre_period_starts.len()
            * self.covariates.len()
            * self.outcomes.len()
    }

    fn check(
        &self,
        panels: &BTreeMap<String, Panel>,
        chars: Option<&CharacteristicsTable>,
    ) -> Result<()> {
        if self.n_cells() == 0 {
            return Err(Error::InvalidSpec("specification grid has no cells".into()));
        }
        let mut names = BTreeSet::new();
        for pool in &self.donor_pools {
            if !names.insert(pool.name.as_str()) {
                return Err(Error::InvalidSpec(format!(
                    "duplicate donor pool name `{}`",
                    pool.name
                )));
            }
            if matches!(pool.source, PoolSource::Criteria(_)) && chars.is_none() {
                return Err(Error::InvalidSpec(format!(
                    "donor pool `{}` needs a characteristics table",
                    pool.name
                )));
            }
        }
        for outcome in &self.outcomes {
            if !panels.contains_key(outcome) {
                return Err(Error::InvalidSpec(format!("unknown outcome `{outcome}`")));
            }
        }
        if self.covariates.contains(&true) {
            if chars.is_none() {
                return Err(Error::InvalidSpec(
                    "covariate adjustment needs a characteristics table".into(),
                ));
            }
            if self.covariate_columns.is_empty() {
                return Err(Error::InvalidSpec(
                    "covariate adjustment requested without columns".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub cell_id: String,
    pub donor_pool: String,
    pub pre_period_start: Option<i64>,
    pub covariates: bool,
    pub outcome: String,
    pub n_donors: usize,
    pub estimate: EstimateResult,
    pub inference: InferenceResult,
    pub significant: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell_id: String,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub rows: Vec<GridRow>,
    pub failures: Vec<CellFailure>,
}

struct Cell<'a> {
    id: String,
    pool: &'a DonorPoolVariant,
    start: Option<i64>,
    covariates: bool,
    outcome: &'a str,
}

fn cell_id(pool: &str, start: Option<i64>, covariates: bool, outcome: &str) -> String {
    let start = start.map_or_else(|| "full".to_string(), |s| s.to_string());
    let cov = if covariates { "on" } else { "off" };
    format!("pool={pool}|start={start}|covariates={cov}|outcome={outcome}")
}

/// Placebo inference that tolerates a zero-spread placebo distribution.
fn cell_inference(
    panel: &Panel,
    est: &EstimateResult,
    method: Method,
    config: &EstimatorConfig,
    scheme: PlaceboScheme,
    mode: InferenceMode,
    warnings: &mut Vec<String>,
) -> Result<InferenceResult> {
    let dist = placebo_distribution(panel, method, config, scheme)?;
    warnings.extend(dist.warnings.iter().cloned());
    let (out, warning) = infer_allowing_zero_spread(est.tau_hat, &dist, mode)?;
    warnings.extend(warning);
    Ok(out)
}

fn run_cell(
    grid: &SpecGrid,
    cell: &Cell<'_>,
    panels: &BTreeMap<String, Panel>,
    chars: Option<&CharacteristicsTable>,
) -> Result<GridRow> {
    let panel = &panels[cell.outcome];
    let treated = panel.treated_unit().to_string();
    let donors: Vec<String> = match &cell.pool.source {
        PoolSource::All => panel
            .donor_indices()
            .iter()
            .map(|&i| panel.units()[i].clone())
            .collect(),
        PoolSource::Units(list) => list.clone(),
        PoolSource::Criteria(criteria) => {
            filter_donors(chars.expect("checked"), criteria, &treated)?
        }
    };
    let mut keep = vec![treated.clone()];
    keep.extend(donors.into_iter().filter(|d| *d != treated));
    // keep the panel's unit order so a full-pool cell reproduces the panel exactly
    if let Some(missing) = keep.iter().find(|u| panel.unit_index(u).is_none()) {
        return Err(Error::UnknownUnit(missing.clone()));
    }
    keep.sort_by_key(|u| panel.unit_index(u));
    let mut p = panel.select_units(&keep, &treated)?;
    if let Some(start) = cell.start {
        p = p.from_period(start)?;
    }
    let mut warnings = Vec::new();
    if cell.covariates {
        let r = residualize_covariates(&p, chars.expect("checked"), &grid.covariate_columns)?;
        warnings.extend(r.warnings);
        p = r.panel;
    }
    let est = estimate(&p, grid.method, &grid.estimator)?;
    warnings.extend(est.warnings.iter().cloned());
    let inference = cell_inference(
        &p,
        &est,
        grid.method,
        &grid.estimator,
        grid.scheme,
        grid.inference,
        &mut warnings,
    )?;
    Ok(GridRow {
        cell_id: cell.id.clone(),
        donor_pool: cell.pool.name.clone(),
        pre_period_start: cell.start,
        covariates: cell.covariates,
        outcome: cell.outcome.to_string(),
        n_donors: p.n_donors(),
        significant: inference.p_value() < SIGNIFICANCE_LEVEL,
        estimate: est,
        inference,
        warnings,
    })
}

/// Estimates and infers every cell of the grid. Cells run independently;
/// failures are recorded and do not stop the remaining cells.
pub fn run_spec_grid(
    grid: &SpecGrid,
    panels: &BTreeMap<String, Panel>,
    chars: Option<&CharacteristicsTable>,
) -> Result<GridReport> {
    grid.check(panels, chars)?;
    let mut cells = Vec::with_capacity(grid.n_cells());
    for pool in &grid.donor_pools {
        for &start in &grid.pre_period_starts {
            for &covariates in &grid.covariates {
                for outcome in &grid.outcomes {
                    cells.push(Cell {
                        id: cell_id(&pool.name, start, covariates, outcome),
                        pool,
                        start,
                        covariates,
                        outcome,
                    });
                }
            }
        }
    }
    let results: Vec<(String, Result<GridRow>)> = cells
        .par_iter()
        .map(|cell| (cell.id.clone(), run_cell(grid, cell, panels, chars)))
        .collect();

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (id, result) in results {
        match result {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(CellFailure {
                cell_id: id,
                code: e.code().to_string(),
                message: e.to_string(),
            }),
        }
    }
    rows.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    failures.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    Ok(GridReport { rows, failures })
}

fn opt_str(v: Option<i64>) -> String {
    v.map_or_else(String::new, |s| s.to_string())
}

/// Sensitivity table: one row per successful cell.
pub fn write_grid_csv<W: std::io::Write>(report: &GridReport, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "cell_id",
        "donor_pool",
        "pre_period_start",
        "covariates",
        "outcome",
        "method",
        "n_donors",
        "estimate",
        "ci_low",
        "ci_high",
        "p_value",
        "significant",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.cell_id.as_str(),
            &r.donor_pool,
            &opt_str(r.pre_period_start),
            if r.covariates { "on" } else { "off" },
            &r.outcome,
            r.estimate.method.as_str(),
            &r.n_donors.to_string(),
            &r.estimate.tau_hat.to_string(),
            &r.inference.ci_low.to_string(),
            &r.inference.ci_high.to_string(),
            &r.inference.p_value().to_string(),
            &r.significant.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRow {
    pub outcome: String,
    pub estimate: EstimateResult,
    pub inference: InferenceResult,
    pub significant: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub rows: Vec<CompositionRow>,
    pub failures: Vec<CellFailure>,
}

/// SDID plus placebo inference on each outcome panel, whatever its scale.
pub fn composition_checks(
    panels: &BTreeMap<String, Panel>,
    estimator: &EstimatorConfig,
    mode: InferenceMode,
) -> CompositionReport {
    let results: Vec<(String, Result<CompositionRow>)> = panels
        .par_iter()
        .map(|(name, panel)| {
            let run = || -> Result<CompositionRow> {
                let est = estimate(panel, Method::Sdid, estimator)?;
                let mut warnings = est.warnings.clone();
                let inference = cell_inference(
                    panel,
                    &est,
                    Method::Sdid,
                    estimator,
                    PlaceboScheme::LeaveTreatedOut,
                    mode,
                    &mut warnings,
                )?;
                Ok(CompositionRow {
                    outcome: name.clone(),
                    significant: inference.p_value() < SIGNIFICANCE_LEVEL,
                    estimate: est,
                    inference,
                    warnings,
                })
            };
            (name.clone(), run())
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (name, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => failures.push(CellFailure {
                cell_id: name,
                code: e.code().to_string(),
                message: e.to_string(),
            }),
        }
    }
    rows.sort_by(|a, b| a.outcome.cmp(&b.outcome));
    failures.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    CompositionReport { rows, failures }
}
