//! Learning-curve charts: cross-run mean with a band of half a standard
//! deviation, one panel per metric.

use std::path::Path;

use anyhow::{bail, Result};
use plotters::prelude::*;

use crate::evolve::{curve, read_metrics, CurvePoint, MetricsRow};

type Metric = (&'static str, fn(&MetricsRow) -> f64);

pub const METRICS: [Metric; 4] = [
    ("elite_mean", |r| r.elite_mean),
    ("best", |r| r.best),
    ("mean", |r| r.mean),
    ("mean_rate", |r| r.mean_rate),
];

const PANEL: (u32, u32) = (640, 360);

fn y_range(points: &[CurvePoint]) -> (f64, f64) {
    let lo = points
        .iter()
        .map(|p| p.mean - p.half_std)
        .fold(f64::INFINITY, f64::min);
    let hi = points
        .iter()
        .map(|p| p.mean + p.half_std)
        .fold(f64::NEG_INFINITY, f64::max);
    let pad = if hi > lo {
        0.05 * (hi - lo)
    } else {
        lo.abs().max(1.0) * 0.1
    };
    (lo - pad, hi + pad)
}

/// Writes the chart for `csv` to `out` (SVG). Nothing is written when the
/// CSV has no rows.
pub fn plot(csv: &Path, out: &Path) -> Result<()> {
    let rows = read_metrics(csv)?;
    if rows.is_empty() {
        bail!(spn_core::Error::Config(format!(
            "{} has no data rows",
            csv.display()
        )));
    }
    let curves: Vec<(&str, Vec<CurvePoint>)> = METRICS
        .iter()
        .map(|(name, f)| (*name, curve(&rows, f)))
        .collect();
    let runs = rows.iter().map(|r| r.run).max().unwrap_or(0) + 1;

    let height = PANEL.1 * curves.len() as u32;
    let root = SVGBackend::new(out, (PANEL.0, height)).into_drawing_area();
    root.fill(&WHITE)?;
    for ((name, points), area) in curves.iter().zip(root.split_evenly((curves.len(), 1))) {
        let x_max = points.last().map_or(1, |p| p.generation.max(1)) as f64;
        let (y_lo, y_hi) = y_range(points);
        let mut chart = ChartBuilder::on(&area)
            .caption(format!("{name} ({runs} runs)"), ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(32)
            .y_label_area_size(56)
            .build_cartesian_2d(0.0..x_max, y_lo..y_hi)?;
        chart
            .configure_mesh()
            .x_desc("generation")
            .y_desc(*name)
            .draw()?;

        let band: Vec<(f64, f64)> = points
            .iter()
            .map(|p| (p.generation as f64, p.mean + p.half_std))
            .chain(
                points
                    .iter()
                    .rev()
                    .map(|p| (p.generation as f64, p.mean - p.half_std)),
            )
            .collect();
        chart.draw_series(std::iter::once(Polygon::new(band, BLUE.mix(0.2).filled())))?;
        chart.draw_series(LineSeries::new(
            points.iter().map(|p| (p.generation as f64, p.mean)),
            BLUE.stroke_width(2),
        ))?;
    }
    root.present()?;
    Ok(())
}
