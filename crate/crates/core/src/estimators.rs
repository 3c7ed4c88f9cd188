//! Treatment-effect estimators: difference-in-differences, synthetic control
//! and synthetic difference-in-differences.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::characteristics::CharacteristicsTable;
use crate::error::{Error, Result};
use crate::panel::{validate_panel, OutcomeKind, Panel};
use crate::weights::{
    compute_zeta, control_pre_block, panel_noise_level, solve_simplex_regression,
    solve_time_weights, solve_unit_weights, SolverOptions, WeightSolution,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Did,
    Scm,
    Sdid,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Did => "did",
            Method::Scm => "scm",
            Method::Sdid => "sdid",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "did" => Ok(Method::Did),
            "scm" => Ok(Method::Scm),
            "sdid" => Ok(Method::Sdid),
            other => Err(format!(
                "unknown method `{other}` (expected did, scm or sdid)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Replaces the default unit-weight regularization for SDID.
    pub zeta_override: Option<f64>,
    /// Fit an intercept in the SCM weight problem (off for the classic method).
    pub scm_intercept: bool,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub method: Method,
    pub tau_hat: f64,
    pub unit_weights: Option<WeightSolution>,
    pub time_weights: Option<WeightSolution>,
    pub pre_rmspe: f64,
    pub post_rmspe: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub spec_fingerprint: String,
}

impl EstimateResult {
    /// Post/pre RMSPE ratio with the pre-period error floored at `eps`.
    pub fn rmspe_ratio(&self, eps: f64) -> f64 {
        self.post_rmspe / self.pre_rmspe.max(eps)
    }
}

/// SHA-256 over the panel contents plus method and configuration.
pub fn fingerprint(panel: &Panel, method: Method, config: &EstimatorConfig) -> String {
    let mut hasher = Sha256::new();
    panel.hash_into(&mut hasher);
    hasher.update(method.as_str().as_bytes());
    match config.zeta_override {
        Some(z) => {
            hasher.update([1u8]);
            hasher.update(z.to_bits().to_le_bytes());
        }
        None => hasher.update([0u8]),
    }
    hasher.update([config.scm_intercept as u8]);
    hasher.update(config.solver.tol.to_bits().to_le_bytes());
    hasher.update((config.solver.max_iter as u64).to_le_bytes());
    hex::encode(hasher.finalize())
}

fn require_valid(panel: &Panel) -> Result<()> {
    validate_panel(panel).into_result()?;
    panel.pre_post_split().map(|_| ())
}

fn mean_over(panel: &Panel, unit: usize, periods: &[usize]) -> f64 {
    periods.iter().map(|&t| panel.value(unit, t)).sum::<f64>() / periods.len() as f64
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Pre and post RMS of a per-period gap series.
fn gap_rmspe(panel: &Panel, gap: &[f64]) -> (f64, f64) {
    let pre = panel.pre_indices();
    let post = panel.post_indices();
    (
        rms(pre.iter().map(|&t| gap[t])),
        rms(post.iter().map(|&t| gap[t])),
    )
}

pub fn estimate(panel: &Panel, method: Method, config: &EstimatorConfig) -> Result<EstimateResult> {
    match method {
        Method::Did => estimate_did(panel, config),
        Method::Scm => estimate_scm(panel, config),
        Method::Sdid => estimate_sdid(panel, config),
    }
}

/// Four-cell difference-in-differences with an unweighted donor average.
pub fn estimate_did(panel: &Panel, config: &EstimatorConfig) -> Result<EstimateResult> {
    require_valid(panel)?;
    let donors = panel.donor_indices();
    if donors.is_empty() {
        return Err(Error::InsufficientDonors {
            required: 1,
            found: 0,
        });
    }
    let pre = panel.pre_indices();
    let post = panel.post_indices();
    let n = donors.len() as f64;
    let treated = panel.treated_index();

    let donor_avg: Vec<f64> = (0..panel.n_periods())
        .map(|t| donors.iter().map(|&i| panel.value(i, t)).sum::<f64>() / n)
        .collect();
    let treated_pre = mean_over(panel, treated, &pre);
    let treated_post = mean_over(panel, treated, &post);
    let control_pre = pre.iter().map(|&t| donor_avg[t]).sum::<f64>() / pre.len() as f64;
    let control_post = post.iter().map(|&t| donor_avg[t]).sum::<f64>() / post.len() as f64;
    let tau_hat = (treated_post - treated_pre) - (control_post - control_pre);

    let offset = treated_pre - control_pre;
    let gap: Vec<f64> = (0..panel.n_periods())
        .map(|t| panel.value(treated, t) - donor_avg[t] - offset)
        .collect();
    let (pre_rmspe, post_rmspe) = gap_rmspe(panel, &gap);

    Ok(EstimateResult {
        method: Method::Did,
        tau_hat,
        unit_weights: None,
        time_weights: None,
        pre_rmspe,
        post_rmspe,
        warnings: Vec::new(),
        spec_fingerprint: fingerprint(panel, Method::Did, config),
    })
}

/// Difference-in-differences from four cell means.
pub fn did_from_cell_means(
    treated_pre: f64,
    treated_post: f64,
    control_pre: f64,
    control_post: f64,
) -> f64 {
    (treated_post - treated_pre) - (control_post - control_pre)
}

/// Outcome-only synthetic control: simplex weights fitted to the treated
/// pre-period path without regularization.
pub fn estimate_scm(panel: &Panel, config: &EstimatorConfig) -> Result<EstimateResult> {
    require_valid(panel)?;
    let donors = panel.donor_indices();
    if donors.is_empty() {
        return Err(Error::InsufficientDonors {
            required: 1,
            found: 0,
        });
    }
    let pre = panel.pre_indices();
    let post = panel.post_indices();
    let treated = panel.treated_index();
    let design = DMatrix::from_fn(pre.len(), donors.len(), |t, j| {
        panel.value(donors[j], pre[t])
    });
    let target: Vec<f64> = pre.iter().map(|&t| panel.value(treated, t)).collect();
    let omega =
        solve_simplex_regression(&design, &target, 0.0, config.scm_intercept, config.solver)?;

    let gap: Vec<f64> = (0..panel.n_periods())
        .map(|t| {
            let synth: f64 = donors
                .iter()
                .zip(&omega.weights)
                .map(|(&i, w)| w * panel.value(i, t))
                .sum();
            panel.value(treated, t) - omega.intercept - synth
        })
        .collect();
    let tau_hat = post.iter().map(|&t| gap[t]).sum::<f64>() / post.len() as f64;
    let (pre_rmspe, post_rmspe) = gap_rmspe(panel, &gap);
    let mut warnings = Vec::new();
    if !omega.converged {
        warnings.push(format!(
            "unit weights did not converge in {} iterations",
            omega.iterations
        ));
    }

    Ok(EstimateResult {
        method: Method::Scm,
        tau_hat,
        unit_weights: Some(omega),
        time_weights: None,
        pre_rmspe,
        post_rmspe,
        warnings,
        spec_fingerprint: fingerprint(panel, Method::Scm, config),
    })
}

/// `(ȳ_treated,post − λ·y_treated,pre) − Σ_i ω_i (ȳ_i,post − λ·y_i,pre)`.
///
/// `omega` is over donors in panel order, `lambda` over pre-periods.
pub fn sdid_tau(panel: &Panel, omega: &[f64], lambda: &[f64]) -> Result<f64> {
    let donors = panel.donor_indices();
    let pre = panel.pre_indices();
    let post = panel.post_indices();
    if omega.len() != donors.len() || lambda.len() != pre.len() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} unit and {} time weights, got {} and {}",
            donors.len(),
            pre.len(),
            omega.len(),
            lambda.len()
        )));
    }
    if post.is_empty() {
        return Err(Error::NoPostPeriod);
    }
    let change = |unit: usize| {
        let base: f64 = pre
            .iter()
            .zip(lambda)
            .map(|(&t, l)| l * panel.value(unit, t))
            .sum();
        mean_over(panel, unit, &post) - base
    };
    let treated = change(panel.treated_index());
    let control: f64 = donors.iter().zip(omega).map(|(&i, w)| w * change(i)).sum();
    Ok(treated - control)
}

/// λ-weighted pre-period baseline of one unit.
pub fn time_weighted_baseline(panel: &Panel, unit: usize, lambda: &[f64]) -> f64 {
    panel
        .pre_indices()
        .iter()
        .zip(lambda)
        .map(|(&t, l)| l * panel.value(unit, t))
        .sum()
}

/// Synthetic difference-in-differences with unit and time weights.
pub fn estimate_sdid(panel: &Panel, config: &EstimatorConfig) -> Result<EstimateResult> {
    require_valid(panel)?;
    let donors = panel.donor_indices();
    if donors.is_empty() {
        return Err(Error::InsufficientDonors {
            required: 1,
            found: 0,
        });
    }
    let n_pre = panel.pre_indices().len();
    let n_post = panel.post_indices().len();
    let mut warnings = Vec::new();

    let zeta = match config.zeta_override {
        Some(z) => z,
        None if n_pre >= 2 => compute_zeta(&control_pre_block(panel), 1, n_post)?,
        None => {
            let sigma = panel_noise_level(panel);
            let z = (n_post as f64).powf(0.25) * sigma;
            if z > 0.0 {
                z
            } else {
                1e-9 * (1.0 + panel.max_abs_outcome())
            }
        }
    };

    let omega = solve_unit_weights(panel, zeta, config.solver)?;
    let lambda = if n_pre == 1 {
        warnings.push("single pre-treatment period: time weight fixed at 1".to_string());
        WeightSolution {
            weights: vec![1.0],
            intercept: 0.0,
            zeta: 0.0,
            objective_value: 0.0,
            iterations: 0,
            converged: true,
        }
    } else {
        solve_time_weights(panel, config.solver)?
    };
    for (name, s) in [("unit", &omega), ("time", &lambda)] {
        if !s.converged {
            warnings.push(format!(
                "{name} weights did not converge in {} iterations",
                s.iterations
            ));
        }
    }

    let tau_hat = sdid_tau(panel, &omega.weights, &lambda.weights)?;
    let treated = panel.treated_index();
    let gap: Vec<f64> = (0..panel.n_periods())
        .map(|t| {
            let synth: f64 = donors
                .iter()
                .zip(&omega.weights)
                .map(|(&i, w)| w * panel.value(i, t))
                .sum();
            panel.value(treated, t) - omega.intercept - synth
        })
        .collect();
    let (pre_rmspe, post_rmspe) = gap_rmspe(panel, &gap);

    Ok(EstimateResult {
        method: Method::Sdid,
        tau_hat,
        unit_weights: Some(omega),
        time_weights: Some(lambda),
        pre_rmspe,
        post_rmspe,
        warnings,
        spec_fingerprint: fingerprint(panel, Method::Sdid, config),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residualized {
    pub panel: Panel,
    /// Covariates kept in the projection, in request order.
    pub used_columns: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub warnings: Vec<String>,
}

/// Removes the part of the outcome explained by unit covariates.
///
/// Outcomes of control units (all periods) are regressed on an intercept and
/// the requested covariates; fitted values are then subtracted from every
/// cell, treated unit included. Collinear covariates are dropped with a
/// warning. The returned panel has kind [`OutcomeKind::Real`].
pub fn residualize_covariates(
    panel: &Panel,
    chars: &CharacteristicsTable,
    columns: &[String],
) -> Result<Residualized> {
    let indices = columns
        .iter()
        .map(|c| chars.column_index(c))
        .collect::<Result<Vec<_>>>()?;
    let covariates: Vec<Vec<f64>> = panel
        .units()
        .iter()
        .map(|u| {
            let row = chars.row(u)?;
            Ok(indices.iter().map(|&c| row[c]).collect())
        })
        .collect::<Result<_>>()?;

    let donors = panel.donor_indices();
    let n_periods = panel.n_periods();
    let mut warnings = Vec::new();

    // collinearity screen on the control-unit design (intercept first)
    let mut basis: Vec<DVector<f64>> = vec![DVector::from_element(donors.len(), 1.0)];
    let norm0 = basis[0].norm();
    basis[0] /= norm0;
    let mut kept: Vec<usize> = Vec::new();
    for (k, name) in columns.iter().enumerate() {
        let col = DVector::from_iterator(donors.len(), donors.iter().map(|&i| covariates[i][k]));
        let scale = col.norm();
        let mut resid = col.clone();
        for b in &basis {
            let proj = b.dot(&resid);
            resid -= b * proj;
        }
        if scale == 0.0 || resid.norm() <= 1e-8 * scale {
            warnings.push(format!(
                "covariate `{name}` is collinear on control units and was dropped"
            ));
            continue;
        }
        let n = resid.norm();
        basis.push(resid / n);
        kept.push(k);
    }

    // least squares on control cells: y_it = a + x_i·b
    let rows = donors.len() * n_periods;
    let mut x = DMatrix::zeros(rows, kept.len() + 1);
    let mut y = DVector::zeros(rows);
    for (d, &i) in donors.iter().enumerate() {
        for t in 0..n_periods {
            let r = d * n_periods + t;
            x[(r, 0)] = 1.0;
            for (j, &k) in kept.iter().enumerate() {
                x[(r, j + 1)] = covariates[i][k];
            }
            y[r] = panel.value(i, t);
        }
    }
    let beta = x
        .svd(true, true)
        .solve(&y, 1e-12)
        .map_err(|e| Error::InvalidPanel(format!("covariate projection failed: {e}")))?;

    let fitted: Vec<f64> = (0..panel.n_units())
        .map(|i| {
            beta[0]
                + kept
                    .iter()
                    .enumerate()
                    .map(|(j, &k)| beta[j + 1] * covariates[i][k])
                    .sum::<f64>()
        })
        .collect();
    let residual = panel.map_outcomes(|i, _, v| v - fitted[i]);
    let residual = residual.with_outcomes(residual.outcomes().clone(), OutcomeKind::Real)?;

    Ok(Residualized {
        panel: residual,
        used_columns: kept.iter().map(|&k| columns[k].clone()).collect(),
        coefficients: beta.iter().skip(1).copied().collect(),
        intercept: beta[0],
        warnings,
    })
}

/// `method,tau,pre_rmspe,post_rmspe,fingerprint` row.
pub fn write_estimate_csv<W: std::io::Write>(results: &[EstimateResult], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["method", "tau", "pre_rmspe", "post_rmspe", "fingerprint"])?;
    for r in results {
        w.write_record([
            r.method.as_str(),
            &r.tau_hat.to_string(),
            &r.pre_rmspe.to_string(),
            &r.post_rmspe.to_string(),
            &r.spec_fingerprint,
        ])?;
    }
    w.flush()?;
    Ok(())
}
