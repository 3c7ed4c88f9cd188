mod common;

use synthpanel::characteristics::CharacteristicsTable;
use synthpanel::estimators::{did_from_cell_means, sdid_tau, time_weighted_baseline};
use synthpanel::{
    estimate, estimate_did, estimate_scm, estimate_sdid, generate_replication, read_weights_csv,
    residualize_covariates, EstimatorConfig, FactorModelSpec, Method, OutcomeKind, Panel,
};

use common::{did_oracle, fixture, flint_panel};

const METHODS: [Method; 3] = [Method::Did, Method::Scm, Method::Sdid];

fn cfg() -> EstimatorConfig {
    EstimatorConfig::default()
}

#[test]
fn reference_cell_means_give_minus_7_3() {
    assert!((did_from_cell_means(21.7, 15.5, 19.5, 20.6) + 7.3).abs() < 1e-12);
}

#[test]
fn two_by_two_hand_panel() {
    let panel = Panel::from_rows(
        &["t", "d"],
        &[1, 2],
        &[vec![10.0, 8.0], vec![10.0, 10.0]],
        "t",
        2,
        OutcomeKind::Real,
    )
    .unwrap();
    assert!((estimate_did(&panel, &cfg()).unwrap().tau_hat + 2.0).abs() < 1e-12);
}

#[test]
fn did_matches_independent_oracle_on_fixture() {
    let panel = flint_panel();
    let est = estimate_did(&panel, &cfg()).unwrap();
    assert!((est.tau_hat - did_oracle(&panel)).abs() < 1e-12);
    assert!(est.unit_weights.is_none() && est.time_weights.is_none());
}

#[test]
fn perfect_twin_has_zero_effect_and_fit() {
    let panel = Panel::from_rows(
        &["t", "twin", "other"],
        &[1, 2, 3, 4],
        &[
            vec![1.0, 3.0, 2.0, 5.0],
            vec![1.0, 3.0, 2.0, 5.0],
            vec![7.0, 1.0, 4.0, 0.0],
        ],
        "t",
        4,
        OutcomeKind::Real,
    )
    .unwrap();
    let est = estimate_scm(&panel, &cfg()).unwrap();
    assert!(est.tau_hat.abs() < 1e-9, "{}", est.tau_hat);
    assert!(est.pre_rmspe < 1e-9);
    let w = est.unit_weights.unwrap();
    assert!((w.weights[0] - 1.0).abs() < 1e-9);
}

#[test]
fn identical_units_give_zero_for_every_method() {
    let row = vec![4.0, 2.5, 3.0, 6.0];
    let panel = Panel::from_rows(
        &["a", "b", "c"],
        &[1, 2, 3, 4],
        &[row.clone(), row.clone(), row],
        "b",
        3,
        OutcomeKind::Real,
    )
    .unwrap();
    for m in METHODS {
        assert!(
            estimate(&panel, m, &cfg()).unwrap().tau_hat.abs() < 1e-12,
            "{m}"
        );
    }
}

#[test]
fn minimal_panel_methods_agree() {
    let panel = Panel::from_rows(
        &["t", "d"],
        &[1, 2],
        &[vec![3.0, 7.5], vec![1.0, 2.0]],
        "t",
        2,
        OutcomeKind::Real,
    )
    .unwrap();
    let expected = (7.5 - 3.0) - (2.0 - 1.0);
    let did = estimate_did(&panel, &cfg()).unwrap().tau_hat;
    let scm = estimate_scm(
        &panel,
        &EstimatorConfig {
            scm_intercept: true,
            ..cfg()
        },
    )
    .unwrap();
    let sdid = estimate_sdid(&panel, &cfg()).unwrap();
    for tau in [did, scm.tau_hat, sdid.tau_hat] {
        assert!((tau - expected).abs() < 1e-12, "{tau}");
    }
    assert_eq!(scm.unit_weights.unwrap().weights, vec![1.0]);
    assert!(sdid
        .warnings
        .iter()
        .any(|w| w.contains("single pre-treatment period")));
}

#[test]
fn reference_time_weights_reproduce_treated_baseline() {
    let panel = flint_panel();
    let lambda: Vec<f64> =
        read_weights_csv(std::fs::File::open(fixture("sdid_time_weights.csv")).unwrap())
            .unwrap()
            .into_iter()
            .map(|(_, w)| w)
            .collect();
    // reference rates rounded to one decimal
    let rounded = Panel::from_rows(
        &["Flint", "x"],
        &[2021, 2022, 2023, 2024],
        &[vec![22.7, 21.7, 20.8, 15.5], vec![0.0; 4]],
        "Flint",
        2024,
        OutcomeKind::Rate,
    )
    .unwrap();
    let baseline = 0.43497877 * 22.7 + 0.14212496 * 21.7 + 0.42289627 * 20.8;
    assert!((time_weighted_baseline(&rounded, 0, &lambda) - baseline).abs() < 1e-12);
    assert!((baseline - 21.75).abs() < 0.005);
    assert!((15.5 - baseline + 6.25).abs() < 0.005);

    // the reference unit weights are a valid input to the SDID formula
    let omega: Vec<f64> =
        read_weights_csv(std::fs::File::open(fixture("sdid_unit_weights.csv")).unwrap())
            .unwrap()
            .into_iter()
            .map(|(_, w)| w)
            .collect();
    assert_eq!(omega.len(), panel.n_donors());
    assert!(sdid_tau(&panel, &omega, &lambda).unwrap().is_finite());
}

#[test]
fn sdid_formula_matches_direct_arithmetic() {
    let panel = flint_panel();
    let est = estimate_sdid(&panel, &cfg()).unwrap();
    let omega = &est.unit_weights.as_ref().unwrap().weights;
    let lambda = &est.time_weights.as_ref().unwrap().weights;
    let pre = panel.pre_indices();
    let post = panel.post_indices();
    let change = |i: usize| {
        let post_mean: f64 =
            post.iter().map(|&t| panel.value(i, t)).sum::<f64>() / post.len() as f64;
        post_mean
            - pre
                .iter()
                .zip(lambda)
                .map(|(&t, l)| l * panel.value(i, t))
                .sum::<f64>()
    };
    let control: f64 = panel
        .donor_indices()
        .iter()
        .zip(omega)
        .map(|(&i, w)| w * change(i))
        .sum();
    assert!((est.tau_hat - (change(panel.treated_index()) - control)).abs() < 1e-12);
    assert!(est.pre_rmspe >= 0.0 && est.post_rmspe >= 0.0);
}

fn constant_table(
    panel: &Panel,
    value: impl Fn(usize) -> f64,
    columns: &[&str],
) -> CharacteristicsTable {
    let rows = panel
        .units()
        .iter()
        .enumerate()
        .map(|(i, u)| (u.clone(), columns.iter().map(|_| value(i)).collect()))
        .collect();
    CharacteristicsTable::new(columns.iter().map(|c| c.to_string()).collect(), rows).unwrap()
}

#[test]
fn constant_covariate_is_absorbed() {
    let panel = flint_panel();
    let chars = constant_table(&panel, |_| 3.0, &["k"]);
    let res = residualize_covariates(&panel, &chars, &["k".to_string()]).unwrap();
    assert!(res.used_columns.is_empty());
    assert_eq!(res.warnings.len(), 1);
    assert_eq!(res.panel.kind(), OutcomeKind::Real);
    let shift = panel.value(0, 0) - res.panel.value(0, 0);
    for i in 0..panel.n_units() {
        for t in 0..panel.n_periods() {
            assert!((panel.value(i, t) - res.panel.value(i, t) - shift).abs() < 1e-10);
        }
    }
    for m in METHODS {
        let a = estimate(&panel, m, &cfg()).unwrap().tau_hat;
        let b = estimate(&res.panel, m, &cfg()).unwrap().tau_hat;
        assert!((a - b).abs() < 1e-8, "{m}: {a} vs {b}");
    }
}

#[test]
fn covariate_equal_to_pre_mean_zeroes_control_pre_means() {
    // a balanced pre/post split so the unit pre-mean is also the all-period mean
    let spec = FactorModelSpec {
        n_donors: 12,
        n_pre: 3,
        n_post: 3,
        seed: 11,
        ..Default::default()
    };
    let base = generate_replication(&spec, 0).unwrap();
    // make each unit's pre mean equal its post mean
    let panel = base.map_outcomes(|i, t, v| if t < 3 { v } else { base.value(i, t - 3) });
    let pre = panel.pre_indices();
    let pre_mean =
        |i: usize| pre.iter().map(|&t| panel.value(i, t)).sum::<f64>() / pre.len() as f64;
    let chars = constant_table(&panel, pre_mean, &["pre_mean"]);
    let res = residualize_covariates(&panel, &chars, &["pre_mean".to_string()]).unwrap();
    assert_eq!(res.used_columns, vec!["pre_mean"]);
    assert!((res.coefficients[0] - 1.0).abs() < 1e-9);
    assert!(res.intercept.abs() < 1e-9);
    for i in panel.donor_indices() {
        let m = pre.iter().map(|&t| res.panel.value(i, t)).sum::<f64>() / pre.len() as f64;
        assert!(m.abs() < 1e-9, "unit {i}: {m}");
    }
}

#[test]
fn missing_covariate_unit_is_unknown_unit() {
    let panel = flint_panel();
    let chars =
        CharacteristicsTable::new(vec!["k".into()], vec![("Flint".into(), vec![1.0])]).unwrap();
    let err = residualize_covariates(&panel, &chars, &["k".to_string()]).unwrap_err();
    assert_eq!(err.code(), "UnknownUnit");
}

#[test]
fn fixture_covariates_keep_sign() {
    let panel = flint_panel();
    let chars = common::michigan();
    let columns: Vec<String> = ["poverty_rate", "pct_nh_black", "median_household_income"]
        .map(String::from)
        .into();
    let res = residualize_covariates(&panel, &chars, &columns).unwrap();
    let raw = estimate_sdid(&panel, &cfg()).unwrap().tau_hat;
    let adj = estimate_sdid(&res.panel, &cfg()).unwrap().tau_hat;
    assert!(raw < 0.0 && adj < 0.0, "{raw} {adj}");
}

#[test]
fn sdid_recovers_injected_effect() {
    // one noisy post cell alone misses ±0.5 a third of the time, so average several
    let spec = FactorModelSpec {
        n_pre: 10,
        n_post: 5,
        true_tau: -5.0,
        noise_sd: 0.5,
        seed: 2024,
        ..Default::default()
    };
    let hits = (0..50)
        .filter(|&rep| {
            let panel = generate_replication(&spec, rep).unwrap();
            (estimate_sdid(&panel, &cfg()).unwrap().tau_hat + 5.0).abs() <= 0.5
        })
        .count();
    assert!(hits >= 45, "{hits}/50");
}

#[test]
fn fingerprints_are_deterministic_and_sensitive() {
    let panel = flint_panel();
    for m in METHODS {
        let a = estimate(&panel, m, &cfg()).unwrap();
        let b = estimate(&panel, m, &cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.spec_fingerprint.len(), 64);
    }
    let a = estimate(&panel, Method::Sdid, &cfg())
        .unwrap()
        .spec_fingerprint;
    let b = estimate(
        &panel,
        Method::Sdid,
        &EstimatorConfig {
            zeta_override: Some(1.0),
            ..cfg()
        },
    )
    .unwrap()
    .spec_fingerprint;
    let c = estimate(&panel, Method::Scm, &cfg())
        .unwrap()
        .spec_fingerprint;
    assert!(a != b && a != c);
}

#[test]
fn no_donors_is_insufficient() {
    let panel = Panel::from_rows(
        &["t"],
        &[1, 2],
        &[vec![1.0, 2.0]],
        "t",
        2,
        OutcomeKind::Real,
    )
    .unwrap();
    for m in [Method::Scm, Method::Sdid] {
        assert_eq!(
            estimate(&panel, m, &cfg()).unwrap_err().code(),
            "InsufficientDonors"
        );
    }
}
