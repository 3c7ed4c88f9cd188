//! Figure-ready series derived from a fitted SDID panel.

use std::path::Path;

use plotters::prelude::*;
use serde::Serialize;
use synthpanel::estimators::time_weighted_baseline;
use synthpanel::{EstimateResult, OutcomeTable, Panel};

use crate::commands::write_file;
use crate::error::CliError;

pub const DONOR_AVERAGE: &str = "donor_average";

#[derive(Debug, Clone, Serialize)]
pub struct TrendRow {
    pub series: String,
    pub period: i64,
    pub value: f64,
    pub treatment_start: i64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FitRow {
    pub period: i64,
    pub treated: f64,
    pub synthetic: f64,
    /// Synthetic series shifted by the fitted level difference.
    pub synthetic_adjusted: f64,
    /// Empty for post-treatment periods.
    pub time_weight: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BalanceRow {
    pub unit: String,
    pub period: i64,
    pub unit_weight: f64,
    pub time_weight: f64,
    pub value: f64,
    pub treated_value: f64,
    /// Value minus the unit's time-weighted pre-period baseline.
    pub value_centered: f64,
    pub treated_centered: f64,
}

pub struct Series {
    pub treated_unit: String,
    pub treatment_start: i64,
    pub trend: Vec<TrendRow>,
    pub fit: Vec<FitRow>,
    pub balance: Vec<BalanceRow>,
}

/// `observed` feeds the trend; `panel` and its SDID `fit` feed the other two.
pub fn build(
    observed: &Panel,
    panel: &Panel,
    fit: &EstimateResult,
    reference: &[OutcomeTable],
) -> Result<Series, CliError> {
    let start = observed.treatment_start();
    let treated = observed.treated_index();
    let donors = observed.donor_indices();

    let mut trend = Vec::new();
    for (t, &period) in observed.periods().iter().enumerate() {
        trend.push(TrendRow {
            series: observed.treated_unit().to_string(),
            period,
            value: observed.value(treated, t),
            treatment_start: start,
        });
    }
    for (t, &period) in observed.periods().iter().enumerate() {
        let avg = donors.iter().map(|&i| observed.value(i, t)).sum::<f64>() / donors.len() as f64;
        trend.push(TrendRow {
            series: DONOR_AVERAGE.to_string(),
            period,
            value: avg,
            treatment_start: start,
        });
    }
    for table in reference {
        for (i, unit) in table.units.iter().enumerate() {
            for (t, &period) in table.periods.iter().enumerate() {
                if observed.periods().contains(&period) {
                    trend.push(TrendRow {
                        series: unit.clone(),
                        period,
                        value: table.outcomes[(i, t)],
                        treatment_start: start,
                    });
                }
            }
        }
    }

    let model_err = || CliError::config("figure series need unit and time weights");
    let omega = fit.unit_weights.as_ref().ok_or_else(model_err)?;
    let lambda = fit.time_weights.as_ref().ok_or_else(model_err)?;
    let donors = panel.donor_indices();
    let treated = panel.treated_index();
    let pre = panel.pre_indices();
    let fit_rows = panel
        .periods()
        .iter()
        .enumerate()
        .map(|(t, &period)| {
            let synthetic: f64 = donors
                .iter()
                .zip(&omega.weights)
                .map(|(&i, w)| w * panel.value(i, t))
                .sum();
            FitRow {
                period,
                treated: panel.value(treated, t),
                synthetic,
                synthetic_adjusted: synthetic + omega.intercept,
                time_weight: pre.iter().position(|&p| p == t).map(|k| lambda.weights[k]),
            }
        })
        .collect();

    let treated_base = time_weighted_baseline(panel, treated, &lambda.weights);
    let mut balance = Vec::new();
    for (d, &i) in donors.iter().enumerate() {
        let base = time_weighted_baseline(panel, i, &lambda.weights);
        for (k, &t) in pre.iter().enumerate() {
            balance.push(BalanceRow {
                unit: panel.units()[i].clone(),
                period: panel.periods()[t],
                unit_weight: omega.weights[d],
                time_weight: lambda.weights[k],
                value: panel.value(i, t),
                treated_value: panel.value(treated, t),
                value_centered: panel.value(i, t) - base,
                treated_centered: panel.value(treated, t) - treated_base,
            });
        }
    }

    Ok(Series {
        treated_unit: panel.treated_unit().to_string(),
        treatment_start: start,
        trend,
        fit: fit_rows,
        balance,
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    write_file(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        for r in rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    })
}

pub fn write_csvs(series: &Series, dir: &Path) -> Result<(), CliError> {
    write_rows(&dir.join("trend.csv"), &series.trend)?;
    write_rows(&dir.join("sdid_fit.csv"), &series.fit)?;
    write_rows(&dir.join("balance.csv"), &series.balance)
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(0, 0, 0),
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
];

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    let pad = ((hi - lo) * 0.1).max(1e-6);
    (lo - pad, hi + pad)
}

type Lines<'a> = Vec<(&'a str, Vec<(f64, f64)>)>;

/// A line chart with a dashed vertical marker at the treatment start.
fn line_chart(path: &Path, caption: &str, lines: &Lines<'_>, marker: f64) -> Result<(), CliError> {
    let render = || -> Result<(), Box<dyn std::error::Error>> {
        let root = SVGBackend::new(path, (720, 440)).into_drawing_area();
        root.fill(&WHITE)?;
        let (x0, x1) = bounds(lines.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.0)));
        let (y0, y1) = bounds(lines.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.1)));
        let mut chart = ChartBuilder::on(&root)
            .caption(caption, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(32)
            .y_label_area_size(48)
            .build_cartesian_2d(x0..x1, y0..y1)?;
        chart
            .configure_mesh()
            .disable_mesh()
            .x_labels(lines.first().map_or(2, |l| l.1.len().max(2)))
            .x_label_formatter(&|x| format!("{x:.0}"))
            .draw()?;
        for (k, (name, pts)) in lines.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))?
                .label(*name)
                .legend(move |(x, y)| {
                    PathElement::new(vec![(x, y), (x + 16, y)], color.stroke_width(2))
                });
        }
        let dashes = 12;
        let seg = (y1 - y0) / (2 * dashes) as f64;
        chart.draw_series((0..dashes).map(|d| {
            let a = y0 + 2.0 * d as f64 * seg;
            PathElement::new(vec![(marker, a), (marker, a + seg)], BLACK.mix(0.6))
        }))?;
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK.mix(0.3))
            .draw()?;
        root.present()?;
        Ok(())
    };
    render().map_err(|e| CliError::io(path, std::io::Error::other(e.to_string())))
}

pub fn render_svgs(series: &Series, dir: &Path) -> Result<(), CliError> {
    let mut names: Vec<&str> = Vec::new();
    for r in &series.trend {
        if !names.contains(&r.series.as_str()) {
            names.push(&r.series);
        }
    }
    let trend: Lines<'_> = names
        .iter()
        .map(|n| {
            let pts = series
                .trend
                .iter()
                .filter(|r| r.series == *n)
                .map(|r| (r.period as f64, r.value))
                .collect();
            (*n, pts)
        })
        .collect();
    // the marker sits between the last pre-period and the first post-period
    let marker = series.treatment_start as f64 - 0.5;
    line_chart(&dir.join("trend.svg"), "Outcome trends", &trend, marker)?;

    let fit: Lines<'_> = vec![
        (
            series.treated_unit.as_str(),
            series
                .fit
                .iter()
                .map(|r| (r.period as f64, r.treated))
                .collect(),
        ),
        (
            "synthetic (level-adjusted)",
            series
                .fit
                .iter()
                .map(|r| (r.period as f64, r.synthetic_adjusted))
                .collect(),
        ),
    ];
    line_chart(
        &dir.join("sdid_fit.svg"),
        "Synthetic difference-in-differences fit",
        &fit,
        marker,
    )
}
