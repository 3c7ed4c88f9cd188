//! Donor-pool construction from a characteristics table.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::characteristics::{CharacteristicsTable, PCT_NH_BLACK, POVERTY_RATE, TOTAL_POPULATION};
use crate::error::{Error, Result};

/// How eligible donors are selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DonorRule {
    /// Every unit meeting all inclusive thresholds.
    Thresholds {
        population_min: f64,
        population_max: f64,
        poverty_rate_min: f64,
        pct_nh_black_min: f64,
    },
    /// The `n` most populous non-excluded units. `n` counts the treated unit
    /// when it ranks among them; it is then dropped from the donor list.
    TopByPopulation { n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonorCriteria {
    #[serde(flatten)]
    pub rule: DonorRule,
    #[serde(default)]
    pub exclusions: BTreeSet<String>,
}

impl DonorCriteria {
    pub fn thresholds(
        population_min: f64,
        population_max: f64,
        poverty_rate_min: f64,
        pct_nh_black_min: f64,
    ) -> Self {
        DonorCriteria {
            rule: DonorRule::Thresholds {
                population_min,
                population_max,
                poverty_rate_min,
                pct_nh_black_min,
            },
            exclusions: BTreeSet::new(),
        }
    }

    pub fn top_by_population(n: usize) -> Self {
        DonorCriteria {
            rule: DonorRule::TopByPopulation { n },
            exclusions: BTreeSet::new(),
        }
    }

    pub fn excluding<I, S>(mut self, units: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.exclusions.extend(units.into_iter().map(Into::into));
        self
    }

    /// Mid-sized, high-poverty, predominantly Black cities: population
    /// 5,000–125,000, poverty ≥ 15%, non-Hispanic Black ≥ 20%.
    pub fn prespecified() -> Self {
        DonorCriteria::thresholds(5_000.0, 125_000.0, 15.0, 20.0)
    }

    pub fn validate(&self) -> Result<()> {
        match self.rule {
            DonorRule::Thresholds {
                population_min,
                population_max,
                poverty_rate_min,
                pct_nh_black_min,
            } => {
                if population_min.is_nan()
                    || population_max.is_nan()
                    || population_min > population_max
                {
                    return Err(Error::InvalidCriteria(format!(
                        "population_min {population_min} exceeds population_max {population_max}"
                    )));
                }
                for (name, v) in [
                    ("poverty_rate_min", poverty_rate_min),
                    ("pct_nh_black_min", pct_nh_black_min),
                ] {
                    if !(0.0..=100.0).contains(&v) {
                        return Err(Error::InvalidCriteria(format!(
                            "{name} = {v} is outside [0, 100]"
                        )));
                    }
                }
            }
            DonorRule::TopByPopulation { n } => {
                if n == 0 {
                    return Err(Error::InvalidCriteria("top_n must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// Selects donors for `treated_unit`. Output is sorted lexicographically.
pub fn filter_donors(
    chars: &CharacteristicsTable,
    criteria: &DonorCriteria,
    treated_unit: &str,
) -> Result<Vec<String>> {
    criteria.validate()?;
    if !chars.contains(treated_unit) {
        return Err(Error::UnknownUnit(treated_unit.to_string()));
    }
    if criteria.exclusions.contains(treated_unit) {
        return Err(Error::InvalidExclusion(treated_unit.to_string()));
    }
    let pop = chars.column_index(TOTAL_POPULATION)?;

    let mut donors: Vec<String> = match criteria.rule {
        DonorRule::Thresholds {
            population_min,
            population_max,
            poverty_rate_min,
            pct_nh_black_min,
        } => {
            let poverty = chars.column_index(POVERTY_RATE)?;
            let black = chars.column_index(PCT_NH_BLACK)?;
            let mut out = Vec::new();
            for unit in chars.units() {
                if unit == treated_unit || criteria.exclusions.contains(unit) {
                    continue;
                }
                let row = chars.row(unit)?;
                if row[pop] >= population_min
                    && row[pop] <= population_max
                    && row[poverty] >= poverty_rate_min
                    && row[black] >= pct_nh_black_min
                {
                    out.push(unit.to_string());
                }
            }
            out
        }
        DonorRule::TopByPopulation { n } => {
            let mut ranked: Vec<(&str, f64)> = chars
                .units()
                .filter(|u| !criteria.exclusions.contains(*u))
                .map(|u| Ok((u, chars.row(u)?[pop])))
                .collect::<Result<_>>()?;
            ranked.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| a.0.cmp(b.0))
            });
            ranked
                .into_iter()
                .take(n)
                .filter(|(u, _)| *u != treated_unit)
                .map(|(u, _)| u.to_string())
                .collect()
        }
    };
    donors.sort();
    if donors.is_empty() {
        return Err(Error::EmptyDonorPool);
    }
    Ok(donors)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub column: String,
    pub mean: f64,
    pub median: f64,
}

/// Unweighted mean and median of every column across the donors.
pub fn pool_summary(chars: &CharacteristicsTable, donors: &[String]) -> Result<Vec<SummaryRow>> {
    if donors.is_empty() {
        return Err(Error::EmptyDonorPool);
    }
    let rows = donors
        .iter()
        .map(|d| chars.row(d))
        .collect::<Result<Vec<_>>>()?;
    Ok(chars
        .columns()
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let mut values: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            SummaryRow {
                column: name.clone(),
                mean: values.iter().sum::<f64>() / values.len() as f64,
                median: median(&mut values),
            }
        })
        .collect())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One-column `unit` CSV.
pub fn write_donor_list<W: std::io::Write>(donors: &[String], sink: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["unit"])?;
    for d in donors {
        w.write_record([d])?;
    }
    w.flush()?;
    Ok(())
}
