//! Command implementations that load inputs and write artifacts.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use synthpanel::inference::{
    infer_allowing_zero_spread, write_placebo_csv, OverfitReport, RmspeRatioTest,
};
use synthpanel::sensitivity::{
    composition_checks, run_spec_grid, write_grid_csv, CompositionReport, DonorPoolVariant,
    PoolSource, SpecGrid,
};
use synthpanel::{
    estimate, filter_donors, load_characteristics, load_panel, monte_carlo, overfit_diagnostic,
    placebo_distribution, read_outcome_table, rmspe_ratio_test, validate_panel, Assignment,
    CharacteristicsTable, EstimateResult, FactorModelSpec, InferenceResult, Method,
    MonteCarloOptions, MonteCarloSummary, Panel, PlaceboDistribution, ValidationReport,
};

use crate::config::{DonorConfig, RunConfig, DEFAULT_POOL, PRIMARY_OUTCOME};
use crate::error::CliError;
use crate::figures;

type Result<T> = std::result::Result<T, CliError>;

/// Panel ready for estimation plus what was done to get there.
pub struct Prepared {
    /// Donor-restricted, period-trimmed and (if configured) residualized.
    pub panel: Panel,
    /// Same units and periods on the observed scale.
    pub observed: Panel,
    pub donors: Vec<String>,
    pub covariates_used: Vec<String>,
    pub warnings: Vec<String>,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

pub fn load_chars(config: &RunConfig) -> Result<Option<CharacteristicsTable>> {
    let data = config.data()?;
    match &data.characteristics {
        Some(p) => Ok(Some(load_characteristics(open(&config.resolve(p))?)?)),
        None => Ok(None),
    }
}

/// Loads one configured outcome over every unit and period of the panel file.
pub fn load_outcome(config: &RunConfig, name: &str) -> Result<Panel> {
    let data = config.data()?;
    let assignment = config.assignment()?;
    let schema = config.outcome(name)?.schema(data)?;
    let path = config.resolve(&data.panel);
    Ok(load_panel(
        open(&path)?,
        &schema,
        &Assignment::new(assignment.treated_unit.clone(), assignment.treatment_start),
    )?)
}

fn matches_any(unit: &str, patterns: &[String]) -> bool {
    patterns.iter().any(|p| unit.contains(p.as_str()))
}

/// Donor names for a pool, before checking they exist in any panel.
pub fn resolve_donors(
    pool: Option<&DonorConfig>,
    panel: &Panel,
    chars: Option<&CharacteristicsTable>,
) -> Result<Vec<String>> {
    let treated = panel.treated_unit();
    let all_donors = || -> Vec<String> {
        panel
            .donor_indices()
            .iter()
            .map(|&i| panel.units()[i].clone())
            .collect()
    };
    let Some(pool) = pool else {
        return Ok(all_donors());
    };
    pool.check()?;
    let skip = &pool.exclude_matching;
    let mut donors: Vec<String> = match (&pool.units, &pool.criteria) {
        (Some(units), _) => units
            .iter()
            .filter(|u| !matches_any(u, skip))
            .cloned()
            .collect(),
        (None, Some(criteria)) => {
            let chars = chars
                .ok_or_else(|| CliError::config("donor criteria need [data].characteristics"))?;
            let extra = chars
                .units()
                .filter(|u| *u != treated && matches_any(u, skip))
                .map(str::to_string);
            filter_donors(chars, &criteria.clone().excluding(extra), treated)?
        }
        (None, None) => all_donors()
            .into_iter()
            .filter(|u| !matches_any(u, skip))
            .collect(),
    };
    donors.retain(|d| d != treated);
    donors.sort();
    donors.dedup();
    Ok(donors)
}

/// Keeps the treated unit and `donors`, in the panel's unit order.
fn restrict(panel: &Panel, donors: &[String]) -> Result<Panel> {
    let treated = panel.treated_unit().to_string();
    if let Some(missing) = donors.iter().find(|d| panel.unit_index(d).is_none()) {
        return Err(synthpanel::Error::UnknownUnit(missing.clone()).into());
    }
    let keep: Vec<String> = panel
        .units()
        .iter()
        .filter(|u| **u == treated || donors.contains(u))
        .cloned()
        .collect();
    Ok(panel.select_units(&keep, &treated)?)
}

pub fn prepare(config: &RunConfig) -> Result<Prepared> {
    let data = config.data()?;
    let chars = load_chars(config)?;
    let full = load_outcome(config, PRIMARY_OUTCOME)?;
    let donors = resolve_donors(config.donors.as_ref(), &full, chars.as_ref())?;
    let mut observed = restrict(&full, &donors)?;
    if let Some(first) = data.first_period {
        observed = observed.from_period(first)?;
    }
    validate_panel(&observed).into_result()?;

    let mut warnings = Vec::new();
    let mut covariates_used = Vec::new();
    let panel = if config.estimation.covariates.is_empty() {
        observed.clone()
    } else {
        let chars = chars
            .as_ref()
            .ok_or_else(|| CliError::config("covariates need [data].characteristics"))?;
        let r =
            synthpanel::residualize_covariates(&observed, chars, &config.estimation.covariates)?;
        warnings.extend(r.warnings);
        covariates_used = r.used_columns;
        r.panel
    };
    Ok(Prepared {
        panel,
        observed,
        donors,
        covariates_used,
        warnings,
    })
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Writes through a buffered file; `f` produces the contents.
pub fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> std::result::Result<(), Box<dyn std::error::Error>>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)
        .and_then(|_| w.flush().map_err(Into::into))
        .map_err(|e| CliError::io(path, std::io::Error::other(e.to_string())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_file(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header)?;
        for r in rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    })
}

#[derive(Serialize)]
struct EstimateArtifact<'a> {
    outcome: &'a str,
    treated_unit: &'a str,
    treatment_start: i64,
    pre_periods: Vec<i64>,
    post_periods: Vec<i64>,
    donors: &'a [String],
    covariates: &'a [String],
    estimate: &'a EstimateResult,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct InferenceArtifact<'a> {
    method: Method,
    inference: &'a InferenceResult,
    rmspe_test: Option<RmspeRatioTest>,
    overfit: OverfitReport,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

struct Inferred {
    dist: PlaceboDistribution,
    inference: InferenceResult,
    rmspe_test: Option<RmspeRatioTest>,
    overfit: OverfitReport,
    warnings: Vec<String>,
}

fn run_inference(config: &RunConfig, panel: &Panel, est: &EstimateResult) -> Result<Inferred> {
    let e = &config.estimation;
    let dist = placebo_distribution(panel, e.method, &e.estimator(), e.placebo_scheme)?;
    let (inference, warning) = infer_allowing_zero_spread(est.tau_hat, &dist, e.inference)?;
    let mut warnings = dist.warnings.clone();
    warnings.extend(warning);
    Ok(Inferred {
        rmspe_test: rmspe_ratio_test(&dist).ok(),
        overfit: overfit_diagnostic(&dist, Default::default()),
        dist,
        inference,
        warnings,
    })
}

fn write_inference(path: &Path, method: Method, inf: &Inferred) -> Result<()> {
    write_json(
        path,
        &InferenceArtifact {
            method,
            inference: &inf.inference,
            rmspe_test: inf.rmspe_test.clone(),
            overfit: inf.overfit.clone(),
            warnings: inf.warnings.clone(),
        },
    )
}

fn periods(panel: &Panel, idx: &[usize]) -> Vec<i64> {
    idx.iter().map(|&t| panel.periods()[t]).collect()
}

/// Unit and time weights as written to disk. DID uses uniform weights;
/// SCM has no time weights.
fn weight_rows(panel: &Panel, est: &EstimateResult) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let donors = panel.donor_indices();
    let pre = panel.pre_indices();
    let unit_w: Vec<f64> = match &est.unit_weights {
        Some(w) => w.weights.clone(),
        None => vec![1.0 / donors.len() as f64; donors.len()],
    };
    let time_w: Vec<f64> = match (&est.time_weights, est.method) {
        (Some(w), _) => w.weights.clone(),
        (None, Method::Did) => vec![1.0 / pre.len() as f64; pre.len()],
        (None, _) => Vec::new(),
    };
    let units = donors
        .iter()
        .zip(&unit_w)
        .map(|(&i, w)| vec![panel.units()[i].clone(), w.to_string()])
        .collect();
    let times = pre
        .iter()
        .zip(&time_w)
        .map(|(&t, w)| vec![panel.periods()[t].to_string(), w.to_string()])
        .collect();
    (units, times)
}

pub fn cmd_estimate(config: &RunConfig) -> Result<String> {
    let prep = prepare(config)?;
    let out = config.output_dir();
    create_dir(&out)?;
    let e = &config.estimation;
    let est = estimate(&prep.panel, e.method, &e.estimator())?;
    let inf = run_inference(config, &prep.panel, &est)?;

    let panel = &prep.panel;
    let mut warnings = prep.warnings.clone();
    warnings.extend(est.warnings.iter().cloned());
    write_json(
        &out.join("estimate.json"),
        &EstimateArtifact {
            outcome: PRIMARY_OUTCOME,
            treated_unit: panel.treated_unit(),
            treatment_start: panel.treatment_start(),
            pre_periods: periods(panel, &panel.pre_indices()),
            post_periods: periods(panel, &panel.post_indices()),
            donors: &prep.donors,
            covariates: &prep.covariates_used,
            estimate: &est,
            warnings,
        },
    )?;
    let (units, times) = weight_rows(panel, &est);
    write_csv(&out.join("weights_unit.csv"), &["unit", "weight"], &units)?;
    write_csv(&out.join("weights_time.csv"), &["period", "weight"], &times)?;
    write_inference(&out.join("inference.json"), e.method, &inf)?;
    Ok(format!(
        "{} estimate {:.4} (95% CI {:.4} to {:.4}, p = {:.4}) with {} donors",
        e.method,
        est.tau_hat,
        inf.inference.ci_low,
        inf.inference.ci_high,
        inf.inference.p_value(),
        prep.donors.len()
    ))
}

pub fn cmd_placebo(config: &RunConfig) -> Result<String> {
    let prep = prepare(config)?;
    let out = config.output_dir();
    create_dir(&out)?;
    let e = &config.estimation;
    let est = estimate(&prep.panel, e.method, &e.estimator())?;
    let inf = run_inference(config, &prep.panel, &est)?;

    write_file(&out.join("placebo_distribution.csv"), |w| {
        Ok(write_placebo_csv(&inf.dist, w)?)
    })?;
    write_inference(&out.join("inference.json"), e.method, &inf)?;
    let fmt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    let t = inf.rmspe_test.as_ref();
    let label = format!(
        "{}; {} pre-periods; {} donors",
        e.method,
        prep.panel.pre_indices().len(),
        prep.panel.n_donors()
    );
    write_csv(
        &out.join("rmspe_table.csv"),
        &[
            "specification",
            "estimate",
            "treated_ratio",
            "placebo_ratio_min",
            "placebo_ratio_max",
            "p_value",
        ],
        &[vec![
            label,
            est.tau_hat.to_string(),
            fmt(t.map(|t| t.treated_ratio)),
            fmt(t.map(|t| t.placebo_min)),
            fmt(t.map(|t| t.placebo_max)),
            fmt(t.map(|t| t.p_value)),
        ]],
    )?;
    Ok(format!(
        "{} placebo estimates; p = {:.4}{}",
        inf.dist.n_usable(),
        inf.inference.p_value(),
        if inf.overfit.overfit {
            "; pre-period fit flagged as overfit"
        } else {
            ""
        }
    ))
}

pub fn cmd_figures(config: &RunConfig) -> Result<String> {
    let prep = prepare(config)?;
    let out = config.output_dir();
    create_dir(&out)?;

    let mut reference = Vec::new();
    if let Some(path) = &config.data()?.statewide {
        let schema = config.outcome(PRIMARY_OUTCOME)?.schema(config.data()?)?;
        reference.push(read_outcome_table(open(&config.resolve(path))?, &schema)?);
    }
    let fit = estimate(&prep.panel, Method::Sdid, &config.estimation.estimator())?;
    let series = figures::build(&prep.observed, &prep.panel, &fit, &reference)?;
    figures::write_csvs(&series, &out)?;
    if config.figures.svg {
        figures::render_svgs(&series, &out)?;
    }
    Ok(format!(
        "figure series for {} written to {}",
        prep.panel.treated_unit(),
        out.display()
    ))
}

/// Outcome panels for the grid, restricted to `[data].first_period` only when
/// the grid does not vary the start itself.
fn grid_panels(
    config: &RunConfig,
    names: &[String],
    trim: Option<i64>,
) -> Result<BTreeMap<String, Panel>> {
    let mut panels = BTreeMap::new();
    for name in names {
        let mut p = load_outcome(config, name)?;
        if let Some(first) = trim {
            p = p.from_period(first)?;
        }
        panels.insert(name.clone(), p);
    }
    Ok(panels)
}

fn composition_rows(report: &CompositionReport) -> Vec<Vec<String>> {
    report
        .rows
        .iter()
        .map(|r| {
            vec![
                r.outcome.clone(),
                r.estimate.tau_hat.to_string(),
                r.inference.ci_low.to_string(),
                r.inference.ci_high.to_string(),
                r.inference.p_value().to_string(),
                r.significant.to_string(),
            ]
        })
        .collect()
}

pub fn cmd_sensitivity(config: &RunConfig) -> Result<String> {
    let sens = config
        .sensitivity
        .as_ref()
        .ok_or_else(|| CliError::config("missing [sensitivity] section"))?;
    let chars = load_chars(config)?;
    let first_period = config.data()?.first_period;
    let trim = if sens.pre_period_starts.is_empty() {
        first_period
    } else {
        None
    };
    let panels = grid_panels(config, &sens.outcomes, trim)?;
    let primary = load_outcome(config, PRIMARY_OUTCOME)?;

    let mut donor_pools = Vec::new();
    for name in &sens.donor_pools {
        let pool = config.donor_pool(name)?;
        let source = match pool {
            None => PoolSource::All,
            Some(p) => PoolSource::Units(resolve_donors(Some(p), &primary, chars.as_ref())?),
        };
        donor_pools.push(DonorPoolVariant {
            name: name.clone(),
            source,
        });
    }
    let e = &config.estimation;
    let grid = SpecGrid {
        method: e.method,
        inference: e.inference,
        estimator: e.estimator(),
        scheme: e.placebo_scheme,
        donor_pools,
        pre_period_starts: if sens.pre_period_starts.is_empty() {
            vec![None]
        } else {
            sens.pre_period_starts.iter().copied().map(Some).collect()
        },
        covariates: sens.covariates.clone(),
        covariate_columns: e.covariates.clone(),
        outcomes: sens.outcomes.clone(),
    };
    let report = run_spec_grid(&grid, &panels, chars.as_ref())?;

    let out = config.output_dir();
    create_dir(&out)?;
    write_file(&out.join("grid.csv"), |w| Ok(write_grid_csv(&report, w)?))?;
    write_json(&out.join("grid.json"), &report)?;

    let mut summary = format!(
        "{} of {} cells estimated",
        report.rows.len(),
        grid.n_cells()
    );
    if !sens.composition.is_empty() {
        let default_donors =
            resolve_donors(config.donor_pool(DEFAULT_POOL)?, &primary, chars.as_ref())?;
        let mut panels = BTreeMap::new();
        for (name, p) in grid_panels(config, &sens.composition, first_period)? {
            panels.insert(name, restrict(&p, &default_donors)?);
        }
        let comp = composition_checks(&panels, &e.estimator(), e.inference);
        write_csv(
            &out.join("composition.csv"),
            &[
                "outcome",
                "estimate",
                "ci_low",
                "ci_high",
                "p_value",
                "significant",
            ],
            &composition_rows(&comp),
        )?;
        write_json(&out.join("composition.json"), &comp)?;
        summary.push_str(&format!("; {} composition outcomes", comp.rows.len()));
    }
    Ok(summary)
}

#[derive(Serialize)]
struct SimulationArtifact<'a> {
    spec: &'a FactorModelSpec,
    summary: &'a MonteCarloSummary,
}

pub fn cmd_simulate(config: &RunConfig) -> Result<String> {
    let sim = config
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::config("missing [simulate] section"))?;
    let mut spec = sim.spec;
    if let Some(seed) = config.seed {
        spec.seed = seed;
    }
    let method = sim.method.unwrap_or(config.estimation.method);
    let e = &config.estimation;
    let options = MonteCarloOptions {
        estimator: e.estimator(),
        inference: e.inference,
        scheme: e.placebo_scheme,
        ..Default::default()
    };
    let summary = monte_carlo(&spec, sim.n_reps, method, &options)?;

    let out = config.output_dir();
    create_dir(&out)?;
    write_json(
        &out.join("simulation.json"),
        &SimulationArtifact {
            spec: &spec,
            summary: &summary,
        },
    )?;
    let s = &summary;
    write_csv(
        &out.join("simulation.csv"),
        &[
            "method",
            "n_reps",
            "n_failed",
            "true_tau",
            "mean_bias",
            "rmse",
            "coverage_95",
            "rejection_rate_at_null",
            "overfit_rate",
            "mean_se",
        ],
        &[vec![
            s.method.to_string(),
            s.n_reps.to_string(),
            s.n_failed.to_string(),
            spec.true_tau.to_string(),
            s.mean_bias.to_string(),
            s.rmse.to_string(),
            s.coverage_95.to_string(),
            s.rejection_rate_at_null.to_string(),
            s.overfit_rate.to_string(),
            s.mean_se.to_string(),
        ]],
    )?;
    Ok(format!(
        "{} reps of {}: bias {:.4}, rmse {:.4}, coverage {:.3}",
        s.n_reps, method, s.mean_bias, s.rmse, s.coverage_95
    ))
}

#[derive(Serialize)]
struct ValidationArtifact<'a> {
    valid: bool,
    n_units: usize,
    n_periods: usize,
    treated_unit: &'a str,
    donors: Vec<String>,
    report: &'a ValidationReport,
}

/// Validates the configured panel. Returns the summary and whether it passed.
pub fn cmd_validate(config: &RunConfig) -> Result<(String, bool)> {
    let chars = load_chars(config)?;
    let mut panel = load_outcome(config, PRIMARY_OUTCOME)?;
    let donors = resolve_donors(config.donors.as_ref(), &panel, chars.as_ref())?;
    panel = restrict(&panel, &donors)?;
    if let Some(first) = config.data()?.first_period {
        panel = panel.from_period(first)?;
    }
    let report = validate_panel(&panel);
    let out = config.output_dir();
    create_dir(&out)?;
    write_json(
        &out.join("validation.json"),
        &ValidationArtifact {
            valid: report.is_valid(),
            n_units: panel.n_units(),
            n_periods: panel.n_periods(),
            treated_unit: panel.treated_unit(),
            donors,
            report: &report,
        },
    )?;
    let summary = format!(
        "{} errors, {} warnings over {} units and {} periods",
        report.errors.len(),
        report.warnings.len(),
        panel.n_units(),
        panel.n_periods()
    );
    Ok((summary, report.is_valid()))
}
