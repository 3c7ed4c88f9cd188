//! Per-unit covariate table used for donor filtering and covariate adjustment.

use std::collections::BTreeMap;
use std::io::Read;

use crate::error::{Error, Result};

pub const TOTAL_POPULATION: &str = "total_population";
pub const POVERTY_RATE: &str = "poverty_rate";
pub const PCT_NH_BLACK: &str = "pct_nh_black";
pub const PCT_HISPANIC: &str = "pct_hispanic";
pub const MEDIAN_HOUSEHOLD_INCOME: &str = "median_household_income";
pub const PCT_LESS_THAN_HS: &str = "pct_less_than_hs";
pub const PCT_FEMALE_HEADED: &str = "pct_female_headed";
pub const PCT_RENTER: &str = "pct_renter";
pub const PCT_HOUSING_BURDENED: &str = "pct_housing_burdened";

/// Known columns whose values are percentages.
pub const PERCENT_COLUMNS: [&str; 7] = [
    POVERTY_RATE,
    PCT_NH_BLACK,
    PCT_HISPANIC,
    PCT_LESS_THAN_HS,
    PCT_FEMALE_HEADED,
    PCT_RENTER,
    PCT_HOUSING_BURDENED,
];

#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicsTable {
    columns: Vec<String>,
    rows: BTreeMap<String, Vec<f64>>,
}

impl CharacteristicsTable {
    /// Builds and validates a table. Rows are `(unit, values)` with values in column order.
    pub fn new(columns: Vec<String>, rows: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (unit, values) in rows {
            if values.len() != columns.len() {
                return Err(Error::InvalidCharacteristics(format!(
                    "row `{unit}` has {} values for {} columns",
                    values.len(),
                    columns.len()
                )));
            }
            if map.insert(unit.clone(), values).is_some() {
                return Err(Error::InvalidCharacteristics(format!(
                    "duplicate unit `{unit}`"
                )));
            }
        }
        let table = CharacteristicsTable { columns, rows: map };
        table.check()?;
        Ok(table)
    }

    fn check(&self) -> Result<()> {
        for (c, name) in self.columns.iter().enumerate() {
            let percent = PERCENT_COLUMNS.contains(&name.as_str());
            let population = name == TOTAL_POPULATION;
            for (unit, values) in &self.rows {
                let v = values[c];
                if !v.is_finite() {
                    return Err(Error::InvalidCharacteristics(format!(
                        "non-finite `{name}` for `{unit}`"
                    )));
                }
                if percent && !(0.0..=100.0).contains(&v) {
                    return Err(Error::InvalidCharacteristics(format!(
                        "`{name}` = {v} for `{unit}` is outside [0, 100]"
                    )));
                }
                if population && v <= 0.0 {
                    return Err(Error::InvalidCharacteristics(format!(
                        "population of `{unit}` must be positive, got {v}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    /// Units in lexicographic order.
    pub fn units(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, unit: &str) -> bool {
        self.rows.contains_key(unit)
    }

    pub fn column_index(&self, column: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == column)
            .ok_or_else(|| Error::UnknownColumn(column.to_string()))
    }

    pub fn row(&self, unit: &str) -> Result<&[f64]> {
        self.rows
            .get(unit)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownUnit(unit.to_string()))
    }

    pub fn get(&self, unit: &str, column: &str) -> Result<f64> {
        let c = self.column_index(column)?;
        Ok(self.row(unit)?[c])
    }
}

/// Reads a `unit,<column>...` CSV.
pub fn load_characteristics<R: Read>(source: R) -> Result<CharacteristicsTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.get(0).map(str::trim) != Some("unit") {
        return Err(Error::UnknownColumn("unit".into()));
    }
    let columns: Vec<String> = headers
        .iter()
        .skip(1)
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let unit = record.get(0).unwrap_or("").trim().to_string();
        let values = record
            .iter()
            .skip(1)
            .map(|raw| {
                raw.trim().parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("cannot parse `{raw}` as a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push((unit, values));
    }
    CharacteristicsTable::new(columns, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_looks_up() {
        let csv = "unit,total_population,poverty_rate\nB,2000,10\nA,1000,20.5\n";
        let t = load_characteristics(csv.as_bytes()).unwrap();
        assert_eq!(t.units().collect::<Vec<_>>(), vec!["A", "B"]);
        assert_eq!(t.get("A", POVERTY_RATE).unwrap(), 20.5);
        assert!(matches!(
            t.get("C", POVERTY_RATE),
            Err(Error::UnknownUnit(_))
        ));
        assert!(matches!(t.get("A", "gini"), Err(Error::UnknownColumn(_))));
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(load_characteristics("unit,poverty_rate\nA,120\n".as_bytes()).is_err());
        assert!(load_characteristics("unit,total_population\nA,0\n".as_bytes()).is_err());
        assert!(load_characteristics("unit,total_population\nA,5\nA,6\n".as_bytes()).is_err());
        // extra columns are unconstrained
        assert!(load_characteristics("unit,gini\nA,-3\n".as_bytes()).is_ok());
    }
}
