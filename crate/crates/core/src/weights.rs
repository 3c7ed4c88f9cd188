//! Simplex-constrained least squares for unit and time weights.
//!
//! Both weight problems share one shape: find an intercept `c` and weights
//! `w` on the probability simplex minimizing
//!
//! ```text
//! Σ_r (c + A_r·w − b_r)² + ζ²·R·‖w‖²
//! ```
//!
//! where `R` is the number of rows of the design `A`. With the intercept
//! enabled the optimal `c` is available in closed form, so the problem reduces
//! to a quadratic over the simplex on the row-centered design. It is solved
//! with pairwise Frank–Wolfe steps and exact line search, starting from the
//! uniform weights.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::Panel;

/// Weights below this are emitted as exactly zero.
pub const WEIGHT_ZERO_CUTOFF: f64 = 1e-10;
/// Relative ridge used only to select among tied minimizers of an
/// unregularized problem.
pub const SELECTION_RIDGE: f64 = 1e-7;
/// Time weights use `TIME_ZETA_FACTOR · σ̂` as their regularization.
pub const TIME_ZETA_FACTOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Relative objective decrease below which the solver stops.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSolution {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub zeta: f64,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl WeightSolution {
    /// Solution placing all mass on a single point (one-column problems).
    fn point_mass(intercept: f64, zeta: f64, objective_value: f64) -> Self {
        WeightSolution {
            weights: vec![1.0],
            intercept,
            zeta,
            objective_value,
            iterations: 0,
            converged: true,
        }
    }
}

/// Standard deviation of first differences along each row of `control` (units × periods).
pub fn first_difference_sd(control: &DMatrix<f64>) -> f64 {
    let diffs: Vec<f64> = (0..control.nrows())
        .flat_map(|i| (1..control.ncols()).map(move |t| control[(i, t)] - control[(i, t - 1)]))
        .collect();
    sample_sd(&diffs)
}

/// Sample (n − 1) standard deviation; zero for fewer than two values.
pub(crate) fn sample_sd(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (ss / (n - 1) as f64).sqrt()
}

fn zeta_floor(control: &DMatrix<f64>) -> f64 {
    let max_abs = control.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    1e-9 * (1.0 + max_abs)
}

/// Unit-weight regularization `(n_treated · n_post)^{1/4} · σ̂`.
///
/// `control_pre` is donors × pre-periods. A zero σ̂ is replaced by a small
/// positive floor so the objective stays strictly convex.
pub fn compute_zeta(control_pre: &DMatrix<f64>, n_treated: usize, n_post: usize) -> Result<f64> {
    if control_pre.ncols() < 2 {
        return Err(Error::InsufficientPrePeriods(control_pre.ncols()));
    }
    if control_pre.nrows() == 0 {
        return Err(Error::InsufficientDonors {
            required: 1,
            found: 0,
        });
    }
    if control_pre.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }
    let sigma = first_difference_sd(control_pre);
    let zeta = ((n_treated * n_post) as f64).powf(0.25) * sigma;
    Ok(if zeta > 0.0 {
        zeta
    } else {
        zeta_floor(control_pre)
    })
}

struct Problem {
    /// Centered (if intercept) design, rows × cols.
    design: DMatrix<f64>,
    target: DVector<f64>,
    col_means: DVector<f64>,
    target_mean: f64,
    eta: f64,
}

impl Problem {
    fn new(design: &DMatrix<f64>, target: &[f64], zeta: f64, with_intercept: bool) -> Self {
        let rows = design.nrows();
        let mut a = design.clone();
        let mut b = DVector::from_column_slice(target);
        // Subtracting a per-row constant from the design row and its target
        // leaves every residual unchanged on the simplex. Removing row means
        // keeps magnitudes small and cancels per-row level shifts before the
        // conditioning-sensitive solve.
        for r in 0..rows {
            let m = a.row(r).sum() / a.ncols() as f64;
            a.row_mut(r).add_scalar_mut(-m);
            b[r] -= m;
        }
        let mut col_means = DVector::zeros(design.ncols());
        let mut target_mean = 0.0;
        if with_intercept {
            for j in 0..a.ncols() {
                let m = a.column(j).sum() / rows as f64;
                col_means[j] = m;
                a.column_mut(j).add_scalar_mut(-m);
            }
            target_mean = b.sum() / rows as f64;
            b.add_scalar_mut(-target_mean);
        }
        Problem {
            design: a,
            target: b,
            col_means,
            target_mean,
            eta: zeta * zeta * rows as f64,
        }
    }

    fn residual(&self, w: &DVector<f64>) -> DVector<f64> {
        &self.design * w - &self.target
    }

    fn objective(&self, w: &DVector<f64>) -> f64 {
        self.residual(w).norm_squared() + self.eta * w.norm_squared()
    }

    fn intercept(&self, w: &DVector<f64>) -> f64 {
        self.target_mean - self.col_means.dot(w)
    }
}

fn check_inputs(design: &DMatrix<f64>, target: &[f64], zeta: f64) -> Result<()> {
    if design.ncols() == 0 {
        return Err(Error::DimensionMismatch("design has no columns".into()));
    }
    if design.nrows() != target.len() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows but target has {} entries",
            design.nrows(),
            target.len()
        )));
    }
    if design.iter().chain(target).any(|v| !v.is_finite()) || !zeta.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

/// Minimizes `Σ (c + A·w − b)² + ζ²·rows·‖w‖²` over intercept `c` (if enabled)
/// and simplex weights `w`.
///
/// Hitting `max_iter` is not an error; the solution is returned with
/// `converged = false`.
pub fn solve_simplex_regression(
    design: &DMatrix<f64>,
    target: &[f64],
    zeta: f64,
    with_intercept: bool,
    options: SolverOptions,
) -> Result<WeightSolution> {
    solve_traced(design, target, zeta, with_intercept, options, None)
}

/// As [`solve_simplex_regression`], also returning the objective after every iteration
/// (the first entry is the objective at the uniform start).
pub fn solve_simplex_regression_traced(
    design: &DMatrix<f64>,
    target: &[f64],
    zeta: f64,
    with_intercept: bool,
    options: SolverOptions,
) -> Result<(WeightSolution, Vec<f64>)> {
    let mut trace = Vec::new();
    let sol = solve_traced(
        design,
        target,
        zeta,
        with_intercept,
        options,
        Some(&mut trace),
    )?;
    Ok((sol, trace))
}

fn solve_traced(
    design: &DMatrix<f64>,
    target: &[f64],
    zeta: f64,
    with_intercept: bool,
    options: SolverOptions,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<WeightSolution> {
    check_inputs(design, target, zeta)?;
    let problem = Problem::new(design, target, zeta, with_intercept);
    let k = design.ncols();

    if k == 1 {
        let w = DVector::from_element(1, 1.0);
        let obj = problem.objective(&w);
        if let Some(t) = trace.as_deref_mut() {
            t.push(obj);
        }
        return Ok(WeightSolution::point_mass(problem.intercept(&w), zeta, obj));
    }

    let mut w = DVector::from_element(k, 1.0 / k as f64);
    let mut residual = problem.residual(&w);
    let mut objective = residual.norm_squared() + problem.eta * w.norm_squared();
    if let Some(t) = trace.as_deref_mut() {
        t.push(objective);
    }

    let mut iterations = 0;
    let mut converged = false;
    while iterations < options.max_iter {
        iterations += 1;
        // half-gradient: Aᵀr + ηw
        let grad = problem.design.tr_mul(&residual) + &w * problem.eta;

        let toward = argmin(grad.iter().copied());
        let mut away = toward;
        let mut away_grad = f64::NEG_INFINITY;
        for j in 0..k {
            if w[j] > 0.0 && grad[j] > away_grad {
                away_grad = grad[j];
                away = j;
            }
        }
        if toward == away {
            converged = true;
            break;
        }
        let slope = grad[toward] - grad[away];
        if slope >= 0.0 {
            converged = true;
            break;
        }
        let direction = problem.design.column(toward) - problem.design.column(away);
        let curvature = direction.norm_squared() + 2.0 * problem.eta;
        let max_step = w[away];
        let step = if curvature > 0.0 {
            (-slope / curvature).min(max_step)
        } else {
            max_step
        };
        if step <= 0.0 {
            converged = true;
            break;
        }
        w[toward] += step;
        w[away] -= step;
        if w[away] < 1e-15 {
            w[toward] += w[away];
            w[away] = 0.0;
        }
        residual = problem.residual(&w);
        let next = residual.norm_squared() + problem.eta * w.norm_squared();
        if let Some(t) = trace.as_deref_mut() {
            t.push(next);
        }
        let decrease = objective - next;
        objective = next;
        if decrease <= options.tol * objective.max(0.0) + f64::MIN_POSITIVE {
            converged = true;
            break;
        }
    }

    // exact finish on the support found by Frank–Wolfe
    if let Some(polished) = polish(&problem, &w) {
        let value = problem.objective(&polished);
        if value <= objective + 1e-12 * (objective + problem.target.norm_squared()) {
            w = polished;
            objective = value;
            converged = true;
            if let Some(t) = trace.as_mut() {
                t.push(objective);
            }
        }
    }

    // clean reporting: drop negligible weights and renormalize
    let mut cleaned = w.map(|v| if v < WEIGHT_ZERO_CUTOFF { 0.0 } else { v });
    let total = cleaned.sum();
    if total > 0.0 {
        cleaned /= total;
    } else {
        cleaned = w.clone();
    }
    Ok(WeightSolution {
        intercept: problem.intercept(&cleaned),
        objective_value: problem.objective(&cleaned).max(0.0),
        weights: cleaned.iter().copied().collect(),
        zeta,
        iterations,
        converged,
    })
}

/// Primal active-set refinement of a feasible iterate.
///
/// Solves the equality-constrained problem on the current support exactly,
/// steps back to the boundary when a weight would turn negative, and adds the
/// coordinate that most violates the optimality conditions. Each support
/// problem is solved as a stacked least-squares system rather than through
/// the Gram matrix, so accuracy degrades with the condition number
/// and not its square. Returns `None` if a solve is unusable or the
/// iteration budget runs out.
fn polish(problem: &Problem, start: &DVector<f64>) -> Option<DVector<f64>> {
    let k = start.len();
    let rows = problem.design.nrows();
    let data_scale = problem.design.amax().max(f64::MIN_POSITIVE);
    // Without regularization the minimizer can be a whole face of the
    // simplex; a vanishing ridge picks the point closest to uniform weights.
    let eta = if problem.eta > 0.0 {
        problem.eta
    } else {
        (SELECTION_RIDGE * data_scale).powi(2)
    };
    let root_eta = eta.sqrt();
    let design_scale = data_scale.max(root_eta);
    let mut w = start.clone();
    let mut active: Vec<bool> = w.iter().map(|&v| v > 0.0).collect();

    for _ in 0..(4 * k + 20) {
        let support: Vec<usize> = (0..k).filter(|&j| active[j]).collect();
        let s = support.len();
        let mut candidate = DVector::zeros(k);
        if s == 1 {
            candidate[support[0]] = 1.0;
        } else {
            // w_S = 1/s + Z·y with Z an orthonormal (Helmert) basis of {Σ = 0}
            let z = DMatrix::from_fn(s, s - 1, |i, c| {
                let m = (c + 1) as f64;
                let norm = (m * (m + 1.0)).sqrt();
                if i <= c {
                    1.0 / norm
                } else if i == c + 1 {
                    -m / norm
                } else {
                    0.0
                }
            });
            let a_s = DMatrix::from_fn(rows, s, |r, i| problem.design[(r, support[i])]);
            let base = 1.0 / s as f64;
            let az = &a_s * &z;
            let stacked = DMatrix::from_fn(rows + s, s - 1, |r, c| {
                if r < rows {
                    az[(r, c)]
                } else {
                    root_eta * z[(r - rows, c)]
                }
            });
            let fitted_base: DVector<f64> = a_s.column_sum() * base;
            let rhs = DVector::from_fn(rows + s, |r, _| {
                if r < rows {
                    problem.target[r] - fitted_base[r]
                } else {
                    -root_eta * base
                }
            });
            let y = least_squares(stacked, &rhs)?;
            let w_s = DVector::from_element(s, base) + &z * y;
            if w_s.iter().any(|v| !v.is_finite()) {
                return None;
            }
            for (i, &j) in support.iter().enumerate() {
                candidate[j] = w_s[i];
            }
        }

        // ratio test against the nonnegativity bounds
        let mut step = 1.0;
        let mut blocking = None;
        for &j in &support {
            if candidate[j] < 0.0 {
                let t = w[j] / (w[j] - candidate[j]);
                if t < step {
                    step = t;
                    blocking = Some(j);
                }
            }
        }
        if let Some(j) = blocking {
            w += (&candidate - &w) * step;
            w[j] = 0.0;
            active[j] = false;
            for v in w.iter_mut() {
                *v = v.max(0.0);
            }
            continue;
        }
        w = candidate;

        // half-gradient Aᵀr + ηw, formed without the Gram matrix
        let grad = problem.design.tr_mul(&problem.residual(&w)) + &w * eta;
        let level = support.iter().map(|&j| grad[j]).sum::<f64>() / s as f64;
        let tol = 1e-12 * design_scale * (design_scale + problem.target.amax());
        let mut entering = None;
        let mut worst = level - tol;
        for j in 0..k {
            if !active[j] && grad[j] < worst {
                worst = grad[j];
                entering = Some(j);
            }
        }
        match entering {
            Some(j) => active[j] = true,
            None => return Some(w),
        }
    }
    None
}

/// `argmin ‖M·y − rhs‖`: Householder QR when `M` is well conditioned, else
/// the minimum-norm SVD solution.
fn least_squares(m: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let n = m.ncols();
    let qr = m.clone().qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    let well_posed = diag_max > 0.0
        && r.diagonal()
            .iter()
            .all(|d| d.abs() > 1e3 * f64::EPSILON * diag_max * n as f64);
    let y = if well_posed {
        let qtb = qr.q().tr_mul(rhs);
        r.solve_upper_triangular(&qtb)?
    } else {
        let svd = m.svd(true, true);
        let cutoff = 1e3 * f64::EPSILON * svd.singular_values.max() * n as f64;
        svd.solve(rhs, cutoff).ok()?
    };
    y.iter().all(|v| v.is_finite()).then_some(y)
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, v) in values.enumerate() {
        if v < best.1 {
            best = (j, v);
        }
    }
    best.0
}

/// Donors × pre-period outcome block.
pub(crate) fn control_pre_block(panel: &Panel) -> DMatrix<f64> {
    let donors = panel.donor_indices();
    let pre = panel.pre_indices();
    DMatrix::from_fn(donors.len(), pre.len(), |i, t| {
        panel.value(donors[i], pre[t])
    })
}

/// Noise scale σ̂ for a panel: first-difference sd over donor pre-periods, or
/// the cross-donor sd when there is a single pre-period.
pub fn panel_noise_level(panel: &Panel) -> f64 {
    let block = control_pre_block(panel);
    if block.ncols() >= 2 {
        first_difference_sd(&block)
    } else {
        sample_sd(block.as_slice())
    }
}

/// Unit weights ω over donors: rows are pre-periods, target the treated pre-period path.
pub fn solve_unit_weights(
    panel: &Panel,
    zeta: f64,
    options: SolverOptions,
) -> Result<WeightSolution> {
    let donors = panel.donor_indices();
    if donors.is_empty() {
        return Err(Error::InsufficientDonors {
            required: 1,
            found: 0,
        });
    }
    let pre = panel.pre_indices();
    if pre.is_empty() {
        return Err(Error::InvalidPanel("no pre-treatment period".into()));
    }
    let design = DMatrix::from_fn(pre.len(), donors.len(), |t, j| {
        panel.value(donors[j], pre[t])
    });
    let treated = panel.treated_index();
    let target: Vec<f64> = pre.iter().map(|&t| panel.value(treated, t)).collect();
    solve_simplex_regression(&design, &target, zeta, true, options)
}

/// Time weights λ over pre-periods: rows are donors, target each donor's post-period mean.
pub fn solve_time_weights(panel: &Panel, options: SolverOptions) -> Result<WeightSolution> {
    let donors = panel.donor_indices();
    if donors.is_empty() {
        return Err(Error::InsufficientDonors {
            required: 1,
            found: 0,
        });
    }
    let pre = panel.pre_indices();
    let post = panel.post_indices();
    if pre.is_empty() {
        return Err(Error::InvalidPanel("no pre-treatment period".into()));
    }
    if post.is_empty() {
        return Err(Error::NoPostPeriod);
    }
    let design = DMatrix::from_fn(donors.len(), pre.len(), |i, t| {
        panel.value(donors[i], pre[t])
    });
    let target: Vec<f64> = donors
        .iter()
        .map(|&i| post.iter().map(|&t| panel.value(i, t)).sum::<f64>() / post.len() as f64)
        .collect();
    let sigma = panel_noise_level(panel);
    let zeta = if sigma > 0.0 {
        TIME_ZETA_FACTOR * sigma
    } else {
        zeta_floor(&design)
    };
    solve_simplex_regression(&design, &target, zeta, true, options)
}

/// `label,weight` CSV with the given header for the label column.
pub fn write_weights_csv<W: Write>(
    label_header: &str,
    labels: &[String],
    solution: &WeightSolution,
    sink: W,
) -> Result<()> {
    if labels.len() != solution.weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} weights",
            labels.len(),
            solution.weights.len()
        )));
    }
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([label_header, "weight"])?;
    for (label, weight) in labels.iter().zip(&solution.weights) {
        w.write_record([label.as_str(), &weight.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a two-column `label,weight` table; the header row is skipped.
///
/// Weights must be finite and nonnegative; no sum constraint is imposed so
/// rounded reference vectors can be checked against their own tolerance.
pub fn read_weights_csv<R: std::io::Read>(source: R) -> Result<Vec<(String, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i as u64 + 2;
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let weight: f64 = record[1].parse().map_err(|_| Error::Parse {
            line,
            message: format!("`{}` is not a number", &record[1]),
        })?;
        if !weight.is_finite() || weight < 0.0 {
            return Err(Error::Parse {
                line,
                message: format!("weight {weight} must be finite and nonnegative"),
            });
        }
        out.push((record[0].to_string(), weight));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub zeta: f64,
    pub intercept: f64,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl From<&WeightSolution> for SolverDiagnostics {
    fn from(s: &WeightSolution) -> Self {
        SolverDiagnostics {
            zeta: s.zeta,
            intercept: s.intercept,
            objective_value: s.objective_value,
            iterations: s.iterations,
            converged: s.converged,
        }
    }
}
