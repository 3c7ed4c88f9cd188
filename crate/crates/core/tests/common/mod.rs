//! Shared fixtures and independent reference implementations for tests.
#![allow(dead_code)]

use std::fs::File;
use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synthpanel::characteristics::CharacteristicsTable;
use synthpanel::{load_characteristics, load_panel, Assignment, OutcomeKind, Panel, PanelSchema};

pub const PRESPECIFIED_DONORS: [&str; 21] = [
    "Albion",
    "Benton Harbor",
    "Benton Township",
    "Bridgeport Township",
    "Buena Vista Township",
    "Eastpointe",
    "Ecorse",
    "Harper Woods",
    "Highland Park",
    "Inkster",
    "Jackson",
    "Lansing",
    "Muskegon",
    "Muskegon Heights",
    "Pontiac",
    "River Rouge",
    "Saginaw",
    "St. Louis",
    "Wayne",
    "Ypsilanti",
    "Ypsilanti Township",
];

pub const PRESPECIFIED_EXCLUSIONS: [&str; 3] = ["Beecher", "Flint Township", "Kalamazoo"];

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

pub fn michigan() -> CharacteristicsTable {
    load_characteristics(File::open(fixture("michigan_characteristics.csv")).unwrap()).unwrap()
}

/// Allegation rate per 100 births for Flint and its 21 pre-specified donors.
pub fn flint_panel() -> Panel {
    let schema = PanelSchema::ratio("allegations", "births");
    let assignment = Assignment::new("Flint", 2024);
    let panel = load_panel(
        File::open(fixture("flint_panel.csv")).unwrap(),
        &schema,
        &assignment,
    )
    .unwrap();
    panel.from_period(2021).unwrap()
}

/// The SDID objective `Σ (c + A·w − b)² + ζ²·rows·‖w‖²` with `c` at its optimum.
pub fn objective(
    design: &DMatrix<f64>,
    target: &[f64],
    zeta: f64,
    with_intercept: bool,
    w: &[f64],
) -> f64 {
    let rows = design.nrows();
    let resid: Vec<f64> = (0..rows)
        .map(|r| {
            (0..design.ncols())
                .map(|j| design[(r, j)] * w[j])
                .sum::<f64>()
                - target[r]
        })
        .collect();
    let c = if with_intercept {
        -resid.iter().sum::<f64>() / rows as f64
    } else {
        0.0
    };
    resid.iter().map(|e| (e + c).powi(2)).sum::<f64>()
        + zeta * zeta * rows as f64 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Minimum of [`objective`] over the simplex lattice with spacing `1/n`.
pub fn grid_minimum(
    design: &DMatrix<f64>,
    target: &[f64],
    zeta: f64,
    with_intercept: bool,
    n: usize,
) -> f64 {
    let k = design.ncols();
    let mut best = f64::INFINITY;
    let mut w = vec![0.0; k];
    match k {
        1 => best = objective(design, target, zeta, with_intercept, &[1.0]),
        2 => {
            for i in 0..=n {
                w[0] = i as f64 / n as f64;
                w[1] = 1.0 - w[0];
                best = best.min(objective(design, target, zeta, with_intercept, &w));
            }
        }
        3 => {
            for i in 0..=n {
                for j in 0..=(n - i) {
                    w[0] = i as f64 / n as f64;
                    w[1] = j as f64 / n as f64;
                    w[2] = (n - i - j) as f64 / n as f64;
                    best = best.min(objective(design, target, zeta, with_intercept, &w));
                }
            }
        }
        _ => panic!("grid oracle supports at most 3 columns"),
    }
    best
}

/// DID from raw cell means, computed without the library.
pub fn did_oracle(panel: &Panel) -> f64 {
    let pre = panel.pre_indices();
    let post = panel.post_indices();
    let tr = panel.treated_index();
    let mean = |units: &[usize], periods: &[usize]| {
        let mut s = 0.0;
        for &i in units {
            for &t in periods {
                s += panel.value(i, t);
            }
        }
        s / (units.len() * periods.len()) as f64
    };
    let donors = panel.donor_indices();
    (mean(&[tr], &post) - mean(&[tr], &pre)) - (mean(&donors, &post) - mean(&donors, &pre))
}

/// A random real-valued panel with unit and time effects plus noise.
pub fn random_panel(rng: &mut ChaCha8Rng, n_units: usize, n_pre: usize, n_post: usize) -> Panel {
    let n_periods = n_pre + n_post;
    let alpha: Vec<f64> = (0..n_units).map(|_| rng.random_range(-5.0..5.0)).collect();
    let beta: Vec<f64> = (0..n_periods)
        .map(|_| rng.random_range(-2.0..2.0))
        .collect();
    let outcomes = DMatrix::from_fn(n_units, n_periods, |i, t| {
        alpha[i] + beta[t] + rng.random_range(-1.0..1.0)
    });
    let units: Vec<String> = (0..n_units).map(|i| format!("unit{i:02}")).collect();
    let periods: Vec<i64> = (0..n_periods as i64).map(|t| 2000 + t).collect();
    Panel::new(
        units,
        periods,
        outcomes,
        "unit00",
        2000 + n_pre as i64,
        OutcomeKind::Real,
    )
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
