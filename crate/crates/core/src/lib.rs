//! Panel-data causal inference for a single treated unit.
//!
//! Modules follow the analysis path of a comparative case study:
//!
//! - [`panel`] and [`characteristics`] hold balanced panels and covariate tables.
//! - [`donor`] builds donor pools.
//! - [`weights`] solves simplex-constrained weight problems.
//! - [`estimators`] implements DID, SCM and SDID.
//! - [`inference`] covers placebo inference and RMSPE diagnostics.
//! - [`sensitivity`] runs specification grids.
//! - [`simgen`] simulates panels with known ground truth.

pub mod characteristics;
pub mod donor;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod panel;
pub mod sensitivity;
pub mod simgen;
pub mod weights;

pub use characteristics::{load_characteristics, CharacteristicsTable};
pub use donor::{filter_donors, pool_summary, DonorCriteria, DonorRule};
pub use error::{Error, ErrorClass, Result};
pub use estimators::{
    estimate, estimate_did, estimate_scm, estimate_sdid, residualize_covariates, EstimateResult,
    EstimatorConfig, Method,
};
pub use inference::{
    gaussian_placebo_inference, overfit_diagnostic, permutation_p, placebo_distribution,
    rmspe_ratio_test, InferenceMode, InferenceResult, PlaceboDistribution, PlaceboScheme,
};
pub use panel::{
    load_panel, read_outcome_table, validate_panel, write_panel, Assignment, OutcomeKind,
    OutcomeTable, Panel, PanelSchema, ValidationCode, ValidationReport,
};
pub use simgen::{
    brute_force_weights, generate_panel, generate_replication, monte_carlo, FactorModelSpec,
    MonteCarloOptions, MonteCarloSummary,
};
pub use weights::{
    compute_zeta, read_weights_csv, solve_simplex_regression, solve_time_weights,
    solve_unit_weights, SolverOptions, WeightSolution,
};
