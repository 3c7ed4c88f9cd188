//! Placebo-based inference: reassign treatment to each donor, collect the
//! resulting estimates, and compare the treated estimate against them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimateResult, EstimatorConfig, Method};
use crate::panel::Panel;
use crate::weights::sample_sd;

/// Two-sided 95% normal quantile.
pub const Z_975: f64 = 1.959964;
/// Relative guard for the pre-period RMSPE in ratio denominators.
pub const RATIO_EPS_FACTOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboEntry {
    pub unit: String,
    pub tau: f64,
    pub pre_rmspe: f64,
    pub post_rmspe: f64,
    pub rmspe_ratio: f64,
    /// Set when the re-estimation failed; such entries are not counted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl PlaceboEntry {
    fn from_estimate(unit: &str, est: &EstimateResult, eps_ratio: f64) -> Self {
        PlaceboEntry {
            unit: unit.to_string(),
            tau: est.tau_hat,
            pre_rmspe: est.pre_rmspe,
            post_rmspe: est.post_rmspe,
            rmspe_ratio: est.rmspe_ratio(eps_ratio),
            failure: None,
        }
    }

    pub fn is_usable(&self) -> bool {
        self.failure.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboDistribution {
    pub method: Method,
    /// One entry per donor, sorted by unit id.
    pub entries: Vec<PlaceboEntry>,
    pub treated_entry: PlaceboEntry,
    /// `1 + max |outcome|` of the panel the distribution was built from.
    pub outcome_scale: f64,
    pub eps_ratio: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl PlaceboDistribution {
    pub fn usable(&self) -> impl Iterator<Item = &PlaceboEntry> {
        self.entries.iter().filter(|e| e.is_usable())
    }

    pub fn usable_taus(&self) -> Vec<f64> {
        self.usable().map(|e| e.tau).collect()
    }

    pub fn n_usable(&self) -> usize {
        self.usable().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceboScheme {
    /// Drop the true treated unit before reassigning treatment.
    #[default]
    LeaveTreatedOut,
    /// Keep the true treated unit in the donor pool of each placebo.
    KeepTreated,
}

/// Re-estimates the effect with each donor in turn as the pseudo-treated unit.
pub fn placebo_distribution(
    panel: &Panel,
    method: Method,
    config: &EstimatorConfig,
    scheme: PlaceboScheme,
) -> Result<PlaceboDistribution> {
    let n_donors = panel.n_donors();
    if n_donors < 2 {
        return Err(Error::InsufficientDonors {
            required: 2,
            found: n_donors,
        });
    }
    let outcome_scale = 1.0 + panel.max_abs_outcome();
    let eps_ratio = RATIO_EPS_FACTOR * outcome_scale;

    let treated = estimate(panel, method, config)?;
    let treated_entry = PlaceboEntry::from_estimate(panel.treated_unit(), &treated, eps_ratio);

    let base = match scheme {
        PlaceboScheme::LeaveTreatedOut => {
            let donors: Vec<String> = panel
                .donor_indices()
                .iter()
                .map(|&i| panel.units()[i].clone())
                .collect();
            panel.select_units(&donors, &donors[0])?
        }
        PlaceboScheme::KeepTreated => panel.clone(),
    };
    let mut donor_names: Vec<String> = panel
        .donor_indices()
        .iter()
        .map(|&i| panel.units()[i].clone())
        .collect();
    donor_names.sort();

    let mut entries: Vec<PlaceboEntry> = donor_names
        .par_iter()
        .map(|unit| {
            let attempt = base
                .with_treated(unit)
                .and_then(|p| estimate(&p, method, config));
            match attempt {
                Ok(est) => PlaceboEntry::from_estimate(unit, &est, eps_ratio),
                Err(e) => PlaceboEntry {
                    unit: unit.clone(),
                    tau: f64::NAN,
                    pre_rmspe: f64::NAN,
                    post_rmspe: f64::NAN,
                    rmspe_ratio: f64::NAN,
                    failure: Some(e.to_string()),
                },
            }
        })
        .collect();
    entries.sort_by(|a, b| a.unit.cmp(&b.unit));
    let warnings = entries
        .iter()
        .filter_map(|e| {
            e.failure
                .as_ref()
                .map(|f| format!("placebo `{}` failed: {f}", e.unit))
        })
        .collect();

    Ok(PlaceboDistribution {
        method,
        entries,
        treated_entry,
        outcome_scale,
        eps_ratio,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    #[default]
    GaussianPlacebo,
    Permutation,
}

impl std::str::FromStr for InferenceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "gaussian" | "gaussian_placebo" => Ok(InferenceMode::GaussianPlacebo),
            "permutation" => Ok(InferenceMode::Permutation),
            other => Err(format!(
                "unknown inference mode `{other}` (expected gaussian or permutation)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub tau: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_gaussian: f64,
    /// Set whenever a placebo distribution was available.
    pub p_permutation: Option<f64>,
    pub n_placebos: usize,
    pub mode: InferenceMode,
}

impl InferenceResult {
    /// p-value of the selected mode.
    pub fn p_value(&self) -> f64 {
        match self.mode {
            InferenceMode::GaussianPlacebo => self.p_gaussian,
            InferenceMode::Permutation => self.p_permutation.unwrap_or(1.0),
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Two-sided normal p-value of `tau / se`.
pub fn gaussian_p(tau: f64, se: f64) -> f64 {
    if se > 0.0 {
        (2.0 * (1.0 - normal_cdf(tau.abs() / se))).clamp(0.0, 1.0)
    } else if tau == 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Standard error implied by a symmetric 95% interval.
pub fn se_from_ci(ci_low: f64, ci_high: f64) -> f64 {
    0.5 * (ci_high - ci_low) / Z_975
}

/// Normal-theory interval and p-value from a known standard error.
pub fn gaussian_from_se(tau: f64, se: f64, n_placebos: usize) -> InferenceResult {
    InferenceResult {
        tau,
        se,
        ci_low: tau - Z_975 * se,
        ci_high: tau + Z_975 * se,
        p_gaussian: gaussian_p(tau, se),
        p_permutation: None,
        n_placebos,
        mode: InferenceMode::GaussianPlacebo,
    }
}

/// Placebo-variance inference: `se` is the sample sd of the placebo estimates.
pub fn gaussian_placebo_inference(tau: f64, dist: &PlaceboDistribution) -> Result<InferenceResult> {
    let taus = dist.usable_taus();
    if taus.len() < 2 {
        return Err(Error::DegenerateDistribution(format!(
            "{} usable placebo estimates, need at least 2",
            taus.len()
        )));
    }
    let se = sample_sd(&taus);
    if se.is_nan() || se <= 0.0 {
        return Err(Error::DegenerateDistribution(
            "placebo estimates have zero spread".into(),
        ));
    }
    let mut out = gaussian_from_se(tau, se, taus.len());
    out.p_permutation = Some(permutation_p(tau, dist, false));
    Ok(out)
}

/// Share of placebos at least as extreme as `tau` in absolute value.
///
/// With `include_treated` the treated unit counts itself in both the
/// numerator and the denominator.
pub fn permutation_p(tau: f64, dist: &PlaceboDistribution, include_treated: bool) -> f64 {
    let taus = dist.usable_taus();
    let extreme = taus.iter().filter(|t| t.abs() >= tau.abs()).count();
    let (num, den) = if include_treated {
        (extreme + 1, taus.len() + 1)
    } else {
        (extreme, taus.len())
    };
    if den == 0 {
        return 1.0;
    }
    num as f64 / den as f64
}

/// Rank-based inference with the placebo spread reported alongside.
pub fn permutation_inference(
    tau: f64,
    dist: &PlaceboDistribution,
    include_treated: bool,
) -> Result<InferenceResult> {
    let taus = dist.usable_taus();
    if taus.is_empty() {
        return Err(Error::DegenerateDistribution(
            "no usable placebo estimates".into(),
        ));
    }
    let se = sample_sd(&taus);
    let mut out = gaussian_from_se(tau, se, taus.len());
    out.p_permutation = Some(permutation_p(tau, dist, include_treated));
    out.mode = InferenceMode::Permutation;
    Ok(out)
}

pub fn infer(tau: f64, dist: &PlaceboDistribution, mode: InferenceMode) -> Result<InferenceResult> {
    match mode {
        InferenceMode::GaussianPlacebo => gaussian_placebo_inference(tau, dist),
        InferenceMode::Permutation => permutation_inference(tau, dist, false),
    }
}

/// Like [`infer`], but a zero-spread distribution with at least two usable
/// placebos yields `se = 0` and a warning instead of an error.
pub fn infer_allowing_zero_spread(
    tau: f64,
    dist: &PlaceboDistribution,
    mode: InferenceMode,
) -> Result<(InferenceResult, Option<String>)> {
    match infer(tau, dist, mode) {
        Err(Error::DegenerateDistribution(msg)) if dist.n_usable() >= 2 => {
            let mut out = gaussian_from_se(tau, 0.0, dist.n_usable());
            out.p_permutation = Some(permutation_p(tau, dist, false));
            out.mode = mode;
            Ok((
                out,
                Some(format!(
                    "degenerate placebo distribution ({msg}); se set to 0"
                )),
            ))
        }
        other => other.map(|r| (r, None)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmspeRatioTest {
    pub treated_ratio: f64,
    pub placebo_min: f64,
    pub placebo_max: f64,
    pub p_value: f64,
    pub n_placebos: usize,
}

/// Share of placebo RMSPE ratios at least as large as the treated ratio.
/// The treated unit is not counted.
pub fn rmspe_ratio_test(dist: &PlaceboDistribution) -> Result<RmspeRatioTest> {
    let ratios: Vec<f64> = dist
        .usable()
        .map(|e| e.rmspe_ratio)
        .filter(|r| r.is_finite())
        .collect();
    if ratios.is_empty() {
        return Err(Error::DegenerateDistribution(
            "no finite placebo RMSPE ratios".into(),
        ));
    }
    let treated = dist.treated_entry.rmspe_ratio;
    let at_least = ratios.iter().filter(|&&r| r >= treated).count();
    Ok(RmspeRatioTest {
        treated_ratio: treated,
        placebo_min: ratios.iter().copied().fold(f64::INFINITY, f64::min),
        placebo_max: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        p_value: at_least as f64 / ratios.len() as f64,
        n_placebos: ratios.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverfitThresholds {
    /// Pre-period RMSPE below `eps_abs · outcome_scale` counts as interpolation.
    pub eps_abs: f64,
    pub ratio_threshold: f64,
}

impl Default for OverfitThresholds {
    fn default() -> Self {
        OverfitThresholds {
            eps_abs: 1e-8,
            ratio_threshold: 1e3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverfitReport {
    pub overfit: bool,
    pub treated_pre_rmspe: f64,
    pub treated_ratio: f64,
    pub pre_rmspe_floor: f64,
    pub ratio_threshold: f64,
    pub triggers: Vec<String>,
    pub advisory: Option<String>,
}

const OVERFIT_ADVISORY: &str = "the treated pre-period fit is near-exact, so RMSPE ratios are driven \
by noise; extend the pre-treatment period or trim the donor pool to units similar to the treated unit";

/// Flags pre-period interpolation of the treated unit.
pub fn overfit_check(
    pre_rmspe: f64,
    ratio: f64,
    outcome_scale: f64,
    thresholds: OverfitThresholds,
) -> OverfitReport {
    let floor = thresholds.eps_abs * outcome_scale;
    let mut triggers = Vec::new();
    if pre_rmspe < floor {
        triggers.push(format!("pre-period RMSPE {pre_rmspe:e} is below {floor:e}"));
    }
    if ratio > thresholds.ratio_threshold {
        triggers.push(format!(
            "RMSPE ratio {ratio:e} exceeds {:e}",
            thresholds.ratio_threshold
        ));
    }
    let overfit = !triggers.is_empty();
    OverfitReport {
        overfit,
        treated_pre_rmspe: pre_rmspe,
        treated_ratio: ratio,
        pre_rmspe_floor: floor,
        ratio_threshold: thresholds.ratio_threshold,
        triggers,
        advisory: overfit.then(|| OVERFIT_ADVISORY.to_string()),
    }
}

pub fn overfit_diagnostic(
    dist: &PlaceboDistribution,
    thresholds: OverfitThresholds,
) -> OverfitReport {
    overfit_check(
        dist.treated_entry.pre_rmspe,
        dist.treated_entry.rmspe_ratio,
        dist.outcome_scale,
        thresholds,
    )
}

/// Placebo table CSV: `unit,tau,pre_rmspe,post_rmspe,rmspe_ratio,status`.
pub fn write_placebo_csv<W: std::io::Write>(dist: &PlaceboDistribution, sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "unit",
        "tau",
        "pre_rmspe",
        "post_rmspe",
        "rmspe_ratio",
        "status",
    ])?;
    for e in &dist.entries {
        w.write_record([
            e.unit.as_str(),
            &e.tau.to_string(),
            &e.pre_rmspe.to_string(),
            &e.post_rmspe.to_string(),
            &e.rmspe_ratio.to_string(),
            if e.is_usable() { "ok" } else { "failed" },
        ])?;
    }
    w.flush()?;
    Ok(())
}
