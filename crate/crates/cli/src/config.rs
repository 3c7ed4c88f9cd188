//! Run configuration: one TOML file, with paths resolved against its directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use synthpanel::{
    DonorCriteria, EstimatorConfig, FactorModelSpec, InferenceMode, Method, OutcomeKind,
    PanelSchema, PlaceboScheme, SolverOptions,
};

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory; overridden by `--out`.
    pub output_dir: Option<PathBuf>,
    /// Root seed for simulation; overridden by `--seed`.
    pub seed: Option<u64>,
    pub data: Option<DataConfig>,
    pub outcome: Option<OutcomeConfig>,
    pub assignment: Option<AssignmentConfig>,
    pub donors: Option<DonorConfig>,
    #[serde(default)]
    pub estimation: EstimationConfig,
    /// Additional outcome definitions, keyed by name.
    #[serde(default)]
    pub outcomes: BTreeMap<String, OutcomeConfig>,
    /// Named donor pools for the sensitivity grid.
    #[serde(default)]
    pub donor_pools: BTreeMap<String, DonorConfig>,
    pub sensitivity: Option<SensitivityConfig>,
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub figures: FiguresConfig,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub panel: PathBuf,
    pub characteristics: Option<PathBuf>,
    /// Optional reference series (e.g. a statewide rate) for the trend figure.
    pub statewide: Option<PathBuf>,
    /// Drop periods before this one.
    pub first_period: Option<i64>,
    #[serde(default = "default_unit_column")]
    pub unit_column: String,
    #[serde(default = "default_period_column")]
    pub period_column: String,
}

fn default_unit_column() -> String {
    "unit".into()
}

fn default_period_column() -> String {
    "period".into()
}

/// Either a ratio `numerator / denominator` (as a percentage) or a single column.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeConfig {
    pub numerator: Option<String>,
    pub denominator: Option<String>,
    pub column: Option<String>,
    pub kind: Option<OutcomeKind>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssignmentConfig {
    pub treated_unit: String,
    pub treatment_start: i64,
}

/// An explicit donor list or selection criteria.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DonorConfig {
    pub units: Option<Vec<String>>,
    pub criteria: Option<DonorCriteria>,
    /// Drops every unit whose name contains one of these substrings.
    #[serde(default)]
    pub exclude_matching: Vec<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationConfig {
    pub method: Method,
    pub inference: InferenceMode,
    pub zeta_override: Option<f64>,
    pub scm_intercept: bool,
    pub placebo_scheme: PlaceboScheme,
    pub covariates: Vec<String>,
    pub solver: SolverOptions,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            method: Method::Sdid,
            inference: InferenceMode::GaussianPlacebo,
            zeta_override: None,
            scm_intercept: false,
            placebo_scheme: PlaceboScheme::LeaveTreatedOut,
            covariates: Vec::new(),
            solver: SolverOptions::default(),
        }
    }
}

impl EstimationConfig {
    pub fn estimator(&self) -> EstimatorConfig {
        EstimatorConfig {
            zeta_override: self.zeta_override,
            scm_intercept: self.scm_intercept,
            solver: self.solver,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    /// Names from `[donor_pools]`; `default` is the `[donors]` section.
    #[serde(default = "default_pools")]
    pub donor_pools: Vec<String>,
    /// First included periods; omit for the full panel only.
    #[serde(default)]
    pub pre_period_starts: Vec<i64>,
    #[serde(default = "default_covariate_toggle")]
    pub covariates: Vec<bool>,
    /// Names from `[outcomes]`; `primary` is the `[outcome]` section.
    #[serde(default = "default_outcomes")]
    pub outcomes: Vec<String>,
    /// Outcomes for the composition battery.
    #[serde(default)]
    pub composition: Vec<String>,
}

fn default_pools() -> Vec<String> {
    vec!["default".into()]
}

fn default_covariate_toggle() -> Vec<bool> {
    vec![false]
}

fn default_outcomes() -> Vec<String> {
    vec![PRIMARY_OUTCOME.into()]
}

pub const PRIMARY_OUTCOME: &str = "primary";
pub const DEFAULT_POOL: &str = "default";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_reps")]
    pub n_reps: usize,
    pub method: Option<Method>,
    #[serde(default)]
    pub spec: FactorModelSpec,
}

fn default_reps() -> usize {
    500
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FiguresConfig {
    /// Also render SVG charts next to the CSV series.
    pub svg: bool,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub method: Option<Method>,
    pub inference: Option<InferenceMode>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::config(format!("cannot read config `{}`: {e}", path.display()))
        })?;
        let mut config: RunConfig = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("invalid config `{}`: {e}", path.display())))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.apply(overrides);
        Ok(config)
    }

    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(out) = &overrides.out {
            // flags are relative to the working directory, not the config
            self.output_dir = Some(std::path::absolute(out).unwrap_or_else(|_| out.clone()));
        }
        if let Some(seed) = overrides.seed {
            self.seed = Some(seed);
        }
        if let Some(method) = overrides.method {
            self.estimation.method = method;
            if let Some(sim) = &mut self.simulate {
                sim.method = Some(method);
            }
        }
        if let Some(mode) = overrides.inference {
            self.estimation.inference = mode;
        }
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(self.output_dir.as_deref().unwrap_or(Path::new("out")))
    }

    pub fn data(&self) -> Result<&DataConfig, CliError> {
        self.data
            .as_ref()
            .ok_or_else(|| CliError::config("missing [data] section"))
    }

    pub fn assignment(&self) -> Result<&AssignmentConfig, CliError> {
        self.assignment
            .as_ref()
            .ok_or_else(|| CliError::config("missing [assignment] section"))
    }

    pub fn outcome(&self, name: &str) -> Result<&OutcomeConfig, CliError> {
        if name == PRIMARY_OUTCOME {
            if let Some(o) = &self.outcome {
                return Ok(o);
            }
        }
        self.outcomes
            .get(name)
            .ok_or_else(|| CliError::config(format!("unknown outcome `{name}`")))
    }

    pub fn donor_pool(&self, name: &str) -> Result<Option<&DonorConfig>, CliError> {
        if name == DEFAULT_POOL && !self.donor_pools.contains_key(name) {
            return Ok(self.donors.as_ref());
        }
        self.donor_pools
            .get(name)
            .map(Some)
            .ok_or_else(|| CliError::config(format!("unknown donor pool `{name}`")))
    }
}

impl OutcomeConfig {
    pub fn schema(&self, data: &DataConfig) -> Result<PanelSchema, CliError> {
        let mut schema = match (&self.column, &self.numerator, &self.denominator) {
            (Some(c), None, None) => {
                PanelSchema::outcome(c, self.kind.unwrap_or(OutcomeKind::Rate))
            }
            (None, Some(n), Some(d)) => PanelSchema::ratio(n, d),
            _ => {
                return Err(CliError::config(
                    "an outcome needs either `column` or both `numerator` and `denominator`",
                ))
            }
        };
        schema.unit = data.unit_column.clone();
        schema.period = data.period_column.clone();
        Ok(schema)
    }
}

impl DonorConfig {
    pub fn check(&self) -> Result<(), CliError> {
        match (&self.units, &self.criteria) {
            (Some(_), Some(_)) => Err(CliError::config(
                "a donor pool takes `units` or `criteria`, not both",
            )),
            (None, None) if self.exclude_matching.is_empty() => Err(CliError::config(
                "a donor pool needs `units`, `criteria` or `exclude_matching`",
            )),
            _ => Ok(()),
        }
    }
}
