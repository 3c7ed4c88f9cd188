//! Balanced unit × period panels with CSV ingestion and validation.
//!
//! A [`Panel`] holds one outcome per (unit, period) cell with a single treated
//! unit and a first treated period. Structural shape (matrix dimensions and
//! the presence of the treated unit) is enforced on construction; the
//! remaining invariants are reported by [`validate_panel`] so that callers can
//! inspect every violation at once.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Semantic scale of the outcome matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    /// Percentage in [0, 100].
    Rate,
    /// Nonnegative count.
    Count,
    /// Unbounded real value (residualized or simulated outcomes).
    Real,
}

impl OutcomeKind {
    fn tag(self) -> u8 {
        match self {
            OutcomeKind::Rate => 0,
            OutcomeKind::Count => 1,
            OutcomeKind::Real => 2,
        }
    }
}

/// Treated unit and first treated period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub treated_unit: String,
    pub treatment_start: i64,
}

impl Assignment {
    pub fn new(treated_unit: impl Into<String>, treatment_start: i64) -> Self {
        Assignment {
            treated_unit: treated_unit.into(),
            treatment_start,
        }
    }
}

/// Column-name mapping for long-format panel CSVs.
///
/// Either `outcome` or both `numerator` and `denominator` must be set. With a
/// numerator/denominator pair the outcome is the percentage
/// `100 · numerator / denominator` and the panel kind is [`OutcomeKind::Rate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSchema {
    pub unit: String,
    pub period: String,
    pub outcome: Option<String>,
    pub numerator: Option<String>,
    pub denominator: Option<String>,
    pub kind: OutcomeKind,
}

impl Default for PanelSchema {
    fn default() -> Self {
        PanelSchema {
            unit: "unit".into(),
            period: "period".into(),
            outcome: Some("outcome".into()),
            numerator: None,
            denominator: None,
            kind: OutcomeKind::Rate,
        }
    }
}

impl PanelSchema {
    pub fn outcome(column: &str, kind: OutcomeKind) -> Self {
        PanelSchema {
            outcome: Some(column.into()),
            kind,
            ..Default::default()
        }
    }

    pub fn ratio(numerator: &str, denominator: &str) -> Self {
        PanelSchema {
            outcome: None,
            numerator: Some(numerator.into()),
            denominator: Some(denominator.into()),
            kind: OutcomeKind::Rate,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    units: Vec<String>,
    periods: Vec<i64>,
    /// units × periods
    outcomes: DMatrix<f64>,
    treated: usize,
    treatment_start: i64,
    kind: OutcomeKind,
}

impl Panel {
    pub fn new(
        units: Vec<String>,
        periods: Vec<i64>,
        outcomes: DMatrix<f64>,
        treated_unit: &str,
        treatment_start: i64,
        kind: OutcomeKind,
    ) -> Result<Panel> {
        if outcomes.nrows() != units.len() || outcomes.ncols() != periods.len() {
            return Err(Error::DimensionMismatch(format!(
                "outcome matrix is {}x{} but panel has {} units and {} periods",
                outcomes.nrows(),
                outcomes.ncols(),
                units.len(),
                periods.len()
            )));
        }
        let treated = units
            .iter()
            .position(|u| u == treated_unit)
            .ok_or_else(|| Error::UnknownUnit(treated_unit.to_string()))?;
        Ok(Panel {
            units,
            periods,
            outcomes,
            treated,
            treatment_start,
            kind,
        })
    }

    /// Builds a panel from row vectors, one per unit.
    pub fn from_rows(
        units: &[&str],
        periods: &[i64],
        rows: &[Vec<f64>],
        treated_unit: &str,
        treatment_start: i64,
        kind: OutcomeKind,
    ) -> Result<Panel> {
        if rows.len() != units.len() || rows.iter().any(|r| r.len() != periods.len()) {
            return Err(Error::DimensionMismatch(
                "row count or row length does not match panel shape".into(),
            ));
        }
        let outcomes = DMatrix::from_fn(units.len(), periods.len(), |i, t| rows[i][t]);
        Panel::new(
            units.iter().map(|u| u.to_string()).collect(),
            periods.to_vec(),
            outcomes,
            treated_unit,
            treatment_start,
            kind,
        )
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn periods(&self) -> &[i64] {
        &self.periods
    }

    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    pub fn value(&self, unit: usize, period: usize) -> f64 {
        self.outcomes[(unit, period)]
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn treated_index(&self) -> usize {
        self.treated
    }

    pub fn treated_unit(&self) -> &str {
        &self.units[self.treated]
    }

    pub fn treatment_start(&self) -> i64 {
        self.treatment_start
    }

    pub fn kind(&self) -> OutcomeKind {
        self.kind
    }

    pub fn unit_index(&self, unit: &str) -> Option<usize> {
        self.units.iter().position(|u| u == unit)
    }

    /// Indices of every untreated unit, in panel order.
    pub fn donor_indices(&self) -> Vec<usize> {
        (0..self.units.len())
            .filter(|&i| i != self.treated)
            .collect()
    }

    pub fn n_donors(&self) -> usize {
        self.units.len() - 1
    }

    pub fn pre_indices(&self) -> Vec<usize> {
        (0..self.periods.len())
            .filter(|&t| self.periods[t] < self.treatment_start)
            .collect()
    }

    pub fn post_indices(&self) -> Vec<usize> {
        (0..self.periods.len())
            .filter(|&t| self.periods[t] >= self.treatment_start)
            .collect()
    }

    /// Splits periods into pre-treatment (`< start`) and post-treatment (`>= start`).
    pub fn pre_post_split(&self) -> Result<(Vec<i64>, Vec<i64>)> {
        let (pre, post): (Vec<i64>, Vec<i64>) = self
            .periods
            .iter()
            .partition(|&&p| p < self.treatment_start);
        if post.is_empty() {
            return Err(Error::NoPostPeriod);
        }
        if pre.is_empty() {
            return Err(Error::InvalidPanel(
                "treatment starts at or before the first period".into(),
            ));
        }
        Ok((pre, post))
    }

    /// Largest absolute outcome; used to scale numerical floors.
    pub fn max_abs_outcome(&self) -> f64 {
        self.outcomes.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Same data with a different unit marked as treated.
    pub fn with_treated(&self, unit: &str) -> Result<Panel> {
        let treated = self
            .unit_index(unit)
            .ok_or_else(|| Error::UnknownUnit(unit.to_string()))?;
        Ok(Panel {
            treated,
            ..self.clone()
        })
    }

    /// Keeps only the listed units (in the given order). The treated unit must be among them.
    pub fn select_units(&self, keep: &[String], treated_unit: &str) -> Result<Panel> {
        let mut rows = Vec::with_capacity(keep.len());
        for u in keep {
            rows.push(
                self.unit_index(u)
                    .ok_or_else(|| Error::UnknownUnit(u.clone()))?,
            );
        }
        let outcomes = self.outcomes.select_rows(rows.iter());
        Panel::new(
            keep.to_vec(),
            self.periods.clone(),
            outcomes,
            treated_unit,
            self.treatment_start,
            self.kind,
        )
    }

    /// Drops a unit that is not the treated one.
    pub fn without_unit(&self, unit: &str) -> Result<Panel> {
        let idx = self
            .unit_index(unit)
            .ok_or_else(|| Error::UnknownUnit(unit.to_string()))?;
        if idx == self.treated {
            return Err(Error::InvalidPanel(format!(
                "cannot remove the treated unit `{unit}`"
            )));
        }
        let keep: Vec<String> = self.units.iter().filter(|u| *u != unit).cloned().collect();
        self.select_units(&keep, self.treated_unit())
    }

    /// Keeps periods `>= first`.
    pub fn from_period(&self, first: i64) -> Result<Panel> {
        let cols: Vec<usize> = (0..self.periods.len())
            .filter(|&t| self.periods[t] >= first)
            .collect();
        if cols.is_empty() {
            return Err(Error::InvalidPanel(format!(
                "no periods at or after {first}"
            )));
        }
        Ok(Panel {
            periods: cols.iter().map(|&t| self.periods[t]).collect(),
            outcomes: self.outcomes.select_columns(cols.iter()),
            ..self.clone()
        })
    }

    /// Same shape and assignment with replaced outcomes.
    pub fn with_outcomes(&self, outcomes: DMatrix<f64>, kind: OutcomeKind) -> Result<Panel> {
        Panel::new(
            self.units.clone(),
            self.periods.clone(),
            outcomes,
            self.treated_unit(),
            self.treatment_start,
            kind,
        )
    }

    pub fn map_outcomes(&self, f: impl Fn(usize, usize, f64) -> f64) -> Panel {
        let outcomes = DMatrix::from_fn(self.n_units(), self.n_periods(), |i, t| {
            f(i, t, self.outcomes[(i, t)])
        });
        Panel {
            outcomes,
            ..self.clone()
        }
    }

    /// Feeds a canonical byte encoding of the panel into a hasher.
    pub fn hash_into(&self, hasher: &mut Sha256) {
        hasher.update((self.units.len() as u64).to_le_bytes());
        for u in &self.units {
            hasher.update((u.len() as u64).to_le_bytes());
            hasher.update(u.as_bytes());
        }
        hasher.update((self.periods.len() as u64).to_le_bytes());
        for p in &self.periods {
            hasher.update(p.to_le_bytes());
        }
        for i in 0..self.n_units() {
            for t in 0..self.n_periods() {
                hasher.update(self.outcomes[(i, t)].to_bits().to_le_bytes());
            }
        }
        hasher.update((self.treated as u64).to_le_bytes());
        hasher.update(self.treatment_start.to_le_bytes());
        hasher.update([self.kind.tag()]);
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::UnknownColumn(name.to_string()))
}

fn parse_field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    what: &str,
) -> Result<T> {
    let line = record.position().map(|p| p.line()).unwrap_or(0);
    let raw = record.get(idx).unwrap_or("").trim();
    raw.parse::<T>().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {what} from `{raw}`"),
    })
}

/// A balanced long-format table before any treatment assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeTable {
    pub units: Vec<String>,
    pub periods: Vec<i64>,
    /// units × periods
    pub outcomes: DMatrix<f64>,
    pub kind: OutcomeKind,
}

impl OutcomeTable {
    pub fn into_panel(self, assignment: &Assignment) -> Result<Panel> {
        Panel::new(
            self.units,
            self.periods,
            self.outcomes,
            &assignment.treated_unit,
            assignment.treatment_start,
            self.kind,
        )
    }
}

/// Reads a long-format panel CSV.
///
/// Units are sorted lexicographically and periods ascending. Every
/// (unit, period) combination must be present exactly once.
pub fn load_panel<R: Read>(
    source: R,
    schema: &PanelSchema,
    assignment: &Assignment,
) -> Result<Panel> {
    read_outcome_table(source, schema)?.into_panel(assignment)
}

/// Reads and balances a long-format CSV without marking a treated unit.
pub fn read_outcome_table<R: Read>(source: R, schema: &PanelSchema) -> Result<OutcomeTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let unit_col = column_index(&headers, &schema.unit)?;
    let period_col = column_index(&headers, &schema.period)?;

    enum Source {
        Outcome(usize),
        Ratio(usize, usize),
    }
    let source = match (&schema.outcome, &schema.numerator, &schema.denominator) {
        (Some(o), _, _) => Source::Outcome(column_index(&headers, o)?),
        (None, Some(n), Some(d)) => {
            Source::Ratio(column_index(&headers, n)?, column_index(&headers, d)?)
        }
        _ => {
            return Err(Error::UnknownColumn(
                "schema needs an outcome column or a numerator/denominator pair".into(),
            ))
        }
    };
    let kind = match source {
        Source::Outcome(_) => schema.kind,
        Source::Ratio(..) => OutcomeKind::Rate,
    };

    let mut cells: BTreeMap<(String, i64), f64> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let unit = record.get(unit_col).unwrap_or("").trim().to_string();
        let period: i64 = parse_field(&record, period_col, "period")?;
        let value = match source {
            Source::Outcome(c) => parse_field::<f64>(&record, c, "outcome")?,
            Source::Ratio(nc, dc) => {
                let num: f64 = parse_field(&record, nc, "numerator")?;
                let den: f64 = parse_field(&record, dc, "denominator")?;
                if den == 0.0 {
                    return Err(Error::DivisionByZero { unit, period });
                }
                100.0 * num / den
            }
        };
        if cells.insert((unit.clone(), period), value).is_some() {
            return Err(Error::DuplicateCell { unit, period });
        }
    }

    let units: BTreeSet<String> = cells.keys().map(|(u, _)| u.clone()).collect();
    let periods: BTreeSet<i64> = cells.keys().map(|(_, p)| *p).collect();
    let units: Vec<String> = units.into_iter().collect();
    let periods: Vec<i64> = periods.into_iter().collect();

    let mut outcomes = DMatrix::zeros(units.len(), periods.len());
    for (i, u) in units.iter().enumerate() {
        for (t, p) in periods.iter().enumerate() {
            match cells.get(&(u.clone(), *p)) {
                Some(v) => outcomes[(i, t)] = *v,
                None => {
                    return Err(Error::UnbalancedPanel {
                        unit: u.clone(),
                        period: *p,
                    })
                }
            }
        }
    }
    Ok(OutcomeTable {
        units,
        periods,
        outcomes,
        kind,
    })
}

/// Writes the panel in `unit,period,outcome` long format.
pub fn write_panel<W: Write>(panel: &Panel, sink: W) -> Result<()> {
    let mut writer = csv::Writer::from_writer(sink);
    writer.write_record(["unit", "period", "outcome"])?;
    for (i, unit) in panel.units().iter().enumerate() {
        for (t, period) in panel.periods().iter().enumerate() {
            writer.write_record([
                unit.as_str(),
                &period.to_string(),
                &panel.value(i, t).to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValidationCode {
    NonFiniteOutcome,
    RateOutOfRange,
    NegativeCount,
    NoPrePeriod,
    NoPostPeriod,
    DuplicateUnit,
    DuplicatePeriod,
    UnsortedPeriods,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub code: ValidationCode,
    pub unit: Option<String>,
    pub period: Option<i64>,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<ValidationIssue>,
    pub warnings: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn has(&self, code: ValidationCode) -> bool {
        self.errors.iter().any(|e| e.code == code)
    }

    /// Converts a failing report into an error.
    pub fn into_result(self) -> Result<()> {
        if self.errors.is_empty() {
            return Ok(());
        }
        let summary: Vec<String> = self
            .errors
            .iter()
            .take(5)
            .map(|e| e.message.clone())
            .collect();
        let more = self.errors.len().saturating_sub(5);
        let mut msg = summary.join("; ");
        if more > 0 {
            msg.push_str(&format!("; and {more} more"));
        }
        Err(Error::InvalidPanel(msg))
    }
}

fn issue(
    code: ValidationCode,
    unit: Option<&str>,
    period: Option<i64>,
    message: String,
) -> ValidationIssue {
    ValidationIssue {
        code,
        unit: unit.map(str::to_string),
        period,
        message,
    }
}

/// Reports every violated panel invariant. Never fails.
pub fn validate_panel(panel: &Panel) -> ValidationReport {
    use ValidationCode::*;
    let mut report = ValidationReport::default();

    let mut seen = BTreeSet::new();
    for u in panel.units() {
        if !seen.insert(u.as_str()) {
            report.errors.push(issue(
                DuplicateUnit,
                Some(u),
                None,
                format!("unit `{u}` appears more than once"),
            ));
        }
    }
    let mut seen = BTreeSet::new();
    for &p in panel.periods() {
        if !seen.insert(p) {
            report.errors.push(issue(
                DuplicatePeriod,
                None,
                Some(p),
                format!("period {p} appears more than once"),
            ));
        }
    }
    if panel.periods().windows(2).any(|w| w[0] > w[1]) {
        report.errors.push(issue(
            UnsortedPeriods,
            None,
            None,
            "periods are not in ascending order".into(),
        ));
    }

    for (i, unit) in panel.units().iter().enumerate() {
        for (t, &period) in panel.periods().iter().enumerate() {
            let v = panel.value(i, t);
            if !v.is_finite() {
                report.errors.push(issue(
                    NonFiniteOutcome,
                    Some(unit),
                    Some(period),
                    format!("non-finite outcome at ({unit}, {period})"),
                ));
                continue;
            }
            match panel.kind() {
                OutcomeKind::Rate if !(0.0..=100.0).contains(&v) => report.errors.push(issue(
                    RateOutOfRange,
                    Some(unit),
                    Some(period),
                    format!("rate {v} outside [0, 100] at ({unit}, {period})"),
                )),
                OutcomeKind::Count if v < 0.0 => report.errors.push(issue(
                    NegativeCount,
                    Some(unit),
                    Some(period),
                    format!("negative count {v} at ({unit}, {period})"),
                )),
                _ => {}
            }
        }
    }

    let start = panel.treatment_start();
    if !panel.periods().iter().any(|&p| p < start) {
        report.errors.push(issue(
            NoPrePeriod,
            None,
            Some(start),
            format!("treatment start {start} leaves no pre-treatment period"),
        ));
    }
    if !panel.periods().iter().any(|&p| p >= start) {
        report.warnings.push(issue(
            NoPostPeriod,
            None,
            Some(start),
            format!("treatment start {start} is after the last period"),
        ));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLINT_COUNTS: &str = "unit,period,numerator,denominator\n\
        Flint,2021,227,1000\n\
        Flint,2022,215,990\n\
        Flint,2023,204,981\n\
        Flint,2024,165,1065\n";

    #[test]
    fn rate_from_counts() {
        let panel = load_panel(
            FLINT_COUNTS.as_bytes(),
            &PanelSchema::ratio("numerator", "denominator"),
            &Assignment::new("Flint", 2024),
        )
        .unwrap();
        assert_eq!(panel.kind(), OutcomeKind::Rate);
        assert!((panel.value(0, 3) - 15.49).abs() < 5e-3);
        assert!((panel.value(0, 3) - 100.0 * 165.0 / 1065.0).abs() == 0.0);
    }

    #[test]
    fn zero_numerator_is_zero_rate() {
        let csv = "unit,period,numerator,denominator\nA,1,0,10\nA,2,1,10\n";
        let panel = load_panel(
            csv.as_bytes(),
            &PanelSchema::ratio("numerator", "denominator"),
            &Assignment::new("A", 2),
        )
        .unwrap();
        assert_eq!(panel.value(0, 0), 0.0);
    }

    #[test]
    fn zero_denominator_reports_cell() {
        let csv = "unit,period,numerator,denominator\nA,1,1,10\nA,2,1,0\n";
        let err = load_panel(
            csv.as_bytes(),
            &PanelSchema::ratio("numerator", "denominator"),
            &Assignment::new("A", 2),
        )
        .unwrap_err();
        match err {
            Error::DivisionByZero { unit, period } => {
                assert_eq!(unit, "A");
                assert_eq!(period, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_cell_is_flagged_exactly() {
        let units = ["A", "B"];
        let periods = [1_i64, 2, 3];
        for (mu, mp) in units
            .iter()
            .flat_map(|u| periods.iter().map(move |p| (*u, *p)))
        {
            let mut csv = String::from("unit,period,outcome\n");
            for u in units {
                for p in periods {
                    if (u, p) != (mu, mp) {
                        csv.push_str(&format!("{u},{p},1.0\n"));
                    }
                }
            }
            let err = load_panel(
                csv.as_bytes(),
                &PanelSchema::default(),
                &Assignment::new("A", 2),
            )
            .unwrap_err();
            match err {
                Error::UnbalancedPanel { unit, period } => {
                    assert_eq!((unit.as_str(), period), (mu, mp));
                }
                other => panic!("unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn unknown_treated_unit() {
        let csv = "unit,period,outcome\nA,1,1\nA,2,2\n";
        let err = load_panel(
            csv.as_bytes(),
            &PanelSchema::default(),
            &Assignment::new("Z", 2),
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownUnit(u) if u == "Z"));
    }

    #[test]
    fn duplicate_cell_rejected() {
        let csv = "unit,period,outcome\nA,1,1\nA,1,2\n";
        let err = load_panel(
            csv.as_bytes(),
            &PanelSchema::default(),
            &Assignment::new("A", 1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateCell { .. }));
    }

    #[test]
    fn rows_are_sorted() {
        let csv = "unit,period,outcome\nB,2,4\nA,2,2\nB,1,3\nA,1,1\n";
        let p = load_panel(
            csv.as_bytes(),
            &PanelSchema::default(),
            &Assignment::new("B", 2),
        )
        .unwrap();
        assert_eq!(p.units(), &["A".to_string(), "B".to_string()]);
        assert_eq!(p.periods(), &[1, 2]);
        assert_eq!(p.value(1, 0), 3.0);
        assert_eq!(p.treated_index(), 1);
    }

    fn flint_only(rates: &[f64], start: i64) -> Panel {
        Panel::from_rows(
            &["Flint"],
            &[2021, 2022, 2023, 2024],
            &[rates.to_vec()],
            "Flint",
            start,
            OutcomeKind::Rate,
        )
        .unwrap()
    }

    #[test]
    fn reference_flint_rates_validate() {
        let report = validate_panel(&flint_only(&[22.7, 21.7, 20.8, 15.5], 2024));
        assert!(report.is_valid(), "{report:?}");
    }

    #[test]
    fn rate_above_hundred_is_flagged() {
        let report = validate_panel(&flint_only(&[22.7, 101.0, 20.8, 15.5], 2024));
        assert!(report.has(ValidationCode::RateOutOfRange));
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].period, Some(2022));
    }

    #[test]
    fn start_at_first_period_has_no_pre_period() {
        let report = validate_panel(&flint_only(&[22.7, 21.7, 20.8, 15.5], 2021));
        assert!(report.has(ValidationCode::NoPrePeriod));
    }

    #[test]
    fn split_primary_period() {
        let (pre, post) = flint_only(&[22.7, 21.7, 20.8, 15.5], 2024)
            .pre_post_split()
            .unwrap();
        assert_eq!(pre, vec![2021, 2022, 2023]);
        assert_eq!(post, vec![2024]);
    }

    #[test]
    fn split_extended_period() {
        let p = Panel::from_rows(
            &["Flint"],
            &[2019, 2020, 2021, 2022, 2023, 2024],
            &[vec![20.0; 6]],
            "Flint",
            2024,
            OutcomeKind::Rate,
        )
        .unwrap();
        let (pre, post) = p.pre_post_split().unwrap();
        assert_eq!(pre.len(), 5);
        assert_eq!(post, vec![2024]);
    }

    #[test]
    fn split_minimal_and_empty_post() {
        let p = Panel::from_rows(
            &["A"],
            &[1, 2],
            &[vec![1.0, 2.0]],
            "A",
            2,
            OutcomeKind::Rate,
        )
        .unwrap();
        assert_eq!(p.pre_post_split().unwrap(), (vec![1], vec![2]));
        let p = Panel::from_rows(
            &["A"],
            &[1, 2],
            &[vec![1.0, 2.0]],
            "A",
            3,
            OutcomeKind::Rate,
        )
        .unwrap();
        assert!(matches!(p.pre_post_split(), Err(Error::NoPostPeriod)));
    }

    #[test]
    fn counts_must_be_nonnegative() {
        let p = Panel::from_rows(
            &["A"],
            &[1, 2],
            &[vec![-1.0, 2.0]],
            "A",
            2,
            OutcomeKind::Count,
        )
        .unwrap();
        assert!(validate_panel(&p).has(ValidationCode::NegativeCount));
    }
}
