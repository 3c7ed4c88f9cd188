//! Synthetic panels with known effects, a Monte Carlo harness, and a
//! brute-force oracle for the weight solver.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorConfig, Method};
use crate::inference::{
    infer_allowing_zero_spread, overfit_check, placebo_distribution, InferenceMode,
    OverfitThresholds, PlaceboScheme, RATIO_EPS_FACTOR,
};
use crate::panel::{OutcomeKind, Panel};
use crate::weights::WeightSolution;

/// Interactive fixed-effects data-generating process.
///
/// `Y_it = α_i + β_t + Σ_k L_ik F_kt + ε_it`, plus `true_tau` on the treated
/// unit's post-period cells. The treated unit is always the first unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FactorModelSpec {
    pub n_donors: usize,
    pub n_pre: usize,
    pub n_post: usize,
    pub n_factors: usize,
    pub factor_loading_scale: f64,
    pub noise_sd: f64,
    pub unit_effect_sd: f64,
    pub time_effect_sd: f64,
    pub true_tau: f64,
    pub seed: u64,
}

impl Default for FactorModelSpec {
    fn default() -> Self {
        FactorModelSpec {
            n_donors: 20,
            n_pre: 3,
            n_post: 1,
            n_factors: 1,
            factor_loading_scale: 1.0,
            noise_sd: 0.5,
            unit_effect_sd: 1.0,
            time_effect_sd: 1.0,
            true_tau: 0.0,
            seed: 0,
        }
    }
}

impl FactorModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_donors < 1 || self.n_pre < 1 || self.n_post < 1 {
            return Err(Error::InvalidSpec(
                "n_donors, n_pre and n_post must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("factor_loading_scale", self.factor_loading_scale),
            ("noise_sd", self.noise_sd),
            ("unit_effect_sd", self.unit_effect_sd),
            ("time_effect_sd", self.time_effect_sd),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "{name} must be a finite nonnegative number"
                )));
            }
        }
        if !self.true_tau.is_finite() {
            return Err(Error::InvalidSpec("true_tau must be finite".into()));
        }
        Ok(())
    }

    /// First treated period; periods are numbered from 1.
    pub fn treatment_start(&self) -> i64 {
        self.n_pre as i64 + 1
    }
}

pub const TREATED_UNIT: &str = "u000";

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        // keep the stream position independent of which sds are zero
        let _: f64 = StandardNormal.sample(rng);
        return 0.0;
    }
    Normal::new(0.0, sd).expect("sd validated").sample(rng)
}

/// Draws replication `rep` of `spec`: the panel on stream `rep` of `spec.seed`.
pub fn generate_replication(spec: &FactorModelSpec, stream: u64) -> Result<Panel> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, stream);
    let n_units = spec.n_donors + 1;
    let n_periods = spec.n_pre + spec.n_post;

    let unit_effects: Vec<f64> = (0..n_units)
        .map(|_| draw(&mut rng, spec.unit_effect_sd))
        .collect();
    let time_effects: Vec<f64> = (0..n_periods)
        .map(|_| draw(&mut rng, spec.time_effect_sd))
        .collect();
    let loadings = DMatrix::from_fn(n_units, spec.n_factors, |_, _| {
        draw(&mut rng, spec.factor_loading_scale)
    });
    let factors = DMatrix::from_fn(spec.n_factors, n_periods, |_, _| draw(&mut rng, 1.0));
    let noise = DMatrix::from_fn(n_units, n_periods, |_, _| draw(&mut rng, spec.noise_sd));
    let common = &loadings * &factors;

    let outcomes = DMatrix::from_fn(n_units, n_periods, |i, t| {
        let mut y = unit_effects[i] + time_effects[t] + common[(i, t)] + noise[(i, t)];
        if i == 0 && t >= spec.n_pre {
            y += spec.true_tau;
        }
        y
    });
    let units: Vec<String> = (0..n_units).map(|i| format!("u{i:03}")).collect();
    let periods: Vec<i64> = (1..=n_periods as i64).collect();
    Panel::new(
        units,
        periods,
        outcomes,
        TREATED_UNIT,
        spec.treatment_start(),
        OutcomeKind::Real,
    )
}

/// Draws one panel; identical seeds give bit-identical panels.
pub fn generate_panel(spec: &FactorModelSpec) -> Result<(Panel, f64)> {
    Ok((generate_replication(spec, 0)?, spec.true_tau))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOptions {
    pub estimator: EstimatorConfig,
    pub inference: InferenceMode,
    pub scheme: PlaceboScheme,
    pub thresholds: OverfitThresholds,
    pub alpha: f64,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        MonteCarloOptions {
            estimator: EstimatorConfig::default(),
            inference: InferenceMode::GaussianPlacebo,
            scheme: PlaceboScheme::LeaveTreatedOut,
            thresholds: OverfitThresholds::default(),
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub method: Method,
    pub n_reps: usize,
    /// Replications whose estimation or inference failed; excluded from the rates.
    pub n_failed: usize,
    pub mean_bias: f64,
    pub rmse: f64,
    pub coverage_95: f64,
    pub rejection_rate_at_null: f64,
    pub overfit_rate: f64,
    pub mean_se: f64,
}

struct RepOutcome {
    error: f64,
    se: f64,
    covered: bool,
    rejected_null: bool,
    overfit: bool,
}

fn run_rep(
    spec: &FactorModelSpec,
    rep: u64,
    method: Method,
    options: &MonteCarloOptions,
) -> Result<RepOutcome> {
    let panel = generate_replication(spec, rep)?;
    let est = estimate(&panel, method, &options.estimator)?;
    let dist = placebo_distribution(&panel, method, &options.estimator, options.scheme)?;
    let (inf, _) = infer_allowing_zero_spread(est.tau_hat, &dist, options.inference)?;

    let scale = 1.0 + panel.max_abs_outcome();
    let ratio = est.rmspe_ratio(RATIO_EPS_FACTOR * scale);
    let overfit = overfit_check(est.pre_rmspe, ratio, scale, options.thresholds).overfit;

    // same draw without the effect
    let rejected_null = if spec.true_tau == 0.0 {
        inf.p_value() < options.alpha
    } else {
        let null_spec = FactorModelSpec {
            true_tau: 0.0,
            ..*spec
        };
        let null_panel = generate_replication(&null_spec, rep)?;
        let null_est = estimate(&null_panel, method, &options.estimator)?;
        let null_dist =
            placebo_distribution(&null_panel, method, &options.estimator, options.scheme)?;
        infer_allowing_zero_spread(null_est.tau_hat, &null_dist, options.inference)?
            .0
            .p_value()
            < options.alpha
    };

    Ok(RepOutcome {
        error: est.tau_hat - spec.true_tau,
        se: inf.se,
        covered: inf.covers(spec.true_tau),
        rejected_null,
        overfit,
    })
}

/// Runs `n_reps` replications on independent streams of `spec.seed`.
pub fn monte_carlo(
    spec: &FactorModelSpec,
    n_reps: usize,
    method: Method,
    options: &MonteCarloOptions,
) -> Result<MonteCarloSummary> {
    spec.validate()?;
    if n_reps == 0 {
        return Err(Error::InvalidSpec("n_reps must be at least 1".into()));
    }
    let outcomes: Vec<Result<RepOutcome>> = (0..n_reps as u64)
        .into_par_iter()
        .map(|rep| run_rep(spec, rep, method, options))
        .collect();

    let ok: Vec<&RepOutcome> = outcomes.iter().filter_map(|r| r.as_ref().ok()).collect();
    let n_failed = n_reps - ok.len();
    let n = ok.len() as f64;
    let share = |f: &dyn Fn(&RepOutcome) -> bool| {
        if ok.is_empty() {
            0.0
        } else {
            ok.iter().filter(|r| f(r)).count() as f64 / n
        }
    };
    let (mean_bias, rmse, mean_se) = if ok.is_empty() {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (
            ok.iter().map(|r| r.error).sum::<f64>() / n,
            (ok.iter().map(|r| r.error * r.error).sum::<f64>() / n).sqrt(),
            ok.iter().map(|r| r.se).sum::<f64>() / n,
        )
    };
    Ok(MonteCarloSummary {
        method,
        n_reps,
        n_failed,
        mean_bias,
        rmse,
        coverage_95: share(&|r| r.covered),
        rejection_rate_at_null: share(&|r| r.rejected_null),
        overfit_rate: share(&|r| r.overfit),
        mean_se,
    })
}

/// Exhaustive simplex grid search for problems with at most three columns.
///
/// Evaluates `Σ (c + A·w − b)² + ζ²·rows·‖w‖²` on every grid point, with the
/// intercept (if enabled) set to its closed-form optimum.
pub fn brute_force_weights(
    design: &DMatrix<f64>,
    target: &[f64],
    zeta: f64,
    with_intercept: bool,
    step: f64,
) -> Result<WeightSolution> {
    let k = design.ncols();
    if k > 3 {
        return Err(Error::TooLargeForOracle(k));
    }
    if k == 0 || design.nrows() != target.len() {
        return Err(Error::DimensionMismatch(
            "oracle design does not match target".into(),
        ));
    }
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidSpec(format!(
            "grid step {step} must lie in (0, 1]"
        )));
    }
    let rows = design.nrows();
    let eta = zeta * zeta * rows as f64;
    let evaluate = |w: &[f64]| -> (f64, f64) {
        let fit: Vec<f64> = (0..rows)
            .map(|r| (0..k).map(|j| w[j] * design[(r, j)]).sum())
            .collect();
        let c = if with_intercept {
            target.iter().zip(&fit).map(|(t, f)| t - f).sum::<f64>() / rows as f64
        } else {
            0.0
        };
        let sse: f64 = target
            .iter()
            .zip(&fit)
            .map(|(t, f)| (c + f - t).powi(2))
            .sum();
        (sse + eta * w.iter().map(|v| v * v).sum::<f64>(), c)
    };

    let n = (1.0 / step).round() as usize;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    let mut consider = |w: Vec<f64>| {
        let (obj, c) = evaluate(&w);
        if best.as_ref().is_none_or(|b| obj < b.0) {
            best = Some((obj, c, w));
        }
    };
    match k {
        1 => consider(vec![1.0]),
        2 => {
            for i in 0..=n {
                let a = i as f64 / n as f64;
                consider(vec![a, 1.0 - a]);
            }
        }
        _ => {
            for i in 0..=n {
                for j in 0..=(n - i) {
                    let a = i as f64 / n as f64;
                    let b = j as f64 / n as f64;
                    consider(vec![a, b, ((n - i - j) as f64 / n as f64).max(0.0)]);
                }
            }
        }
    }
    let (objective_value, intercept, weights) = best.expect("grid is nonempty");
    Ok(WeightSolution {
        weights,
        intercept,
        zeta,
        objective_value,
        iterations: 0,
        converged: true,
    })
}
