//! SVG figures. Each function draws one self-contained chart.

use std::path::Path;

use plotters::prelude::*;

use super::pipeline::{ConfidencePoint, CosinePoint};
use crate::error::{Error, Result};
use crate::eval::ConfidenceCurve;
use crate::geometry::CorrelationReport;

const SIZE: (u32, u32) = (720, 540);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn color(i: usize) -> RGBColor {
    PALETTE[i % PALETTE.len()]
}

fn plot_err<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> Error + '_ {
    move |e| Error::Report(format!("drawing {}: {e}", path.display()))
}

fn prepare(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

/// Range covering `xs` with a little padding; a fixed span when degenerate.
fn span(xs: impl IntoIterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in xs.into_iter().filter(|x| x.is_finite()) {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

/// Labeled point series on shared axes, with an optional y = x line and
/// tick marks on the margins showing each series' marginal spread.
pub fn scatter(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
    diagonal: bool,
) -> Result<()> {
    prepare(path)?;
    let err = plot_err(path);
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.1.iter().copied()).collect();
    let (mut x0, mut x1) = span(all.iter().map(|p| p.0));
    let (mut y0, mut y1) = span(all.iter().map(|p| p.1));
    if diagonal {
        x0 = x0.min(y0);
        y0 = x0;
        x1 = x1.max(y1);
        y1 = x1;
    }
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(&err)?;
    if diagonal {
        chart
            .draw_series(LineSeries::new([(x0, y0), (x1, y1)], BLACK.mix(0.4)))
            .map_err(&err)?;
    }
    let tick_x = (y1 - y0) * 0.02;
    let tick_y = (x1 - x0) * 0.02;
    for (i, (name, pts)) in series.iter().enumerate() {
        let c = color(i);
        chart
            .draw_series(pts.iter().map(|&(x, y)| Circle::new((x, y), 3, c.filled())))
            .map_err(&err)?
            .label(name.as_str())
            .legend(move |(x, y)| Circle::new((x, y), 4, c.filled()));
        chart
            .draw_series(
                pts.iter()
                    .map(|&(x, _)| PathElement::new(vec![(x, y0), (x, y0 + tick_x)], c.mix(0.6))),
            )
            .map_err(&err)?;
        chart
            .draw_series(
                pts.iter()
                    .map(|&(_, y)| PathElement::new(vec![(x0, y), (x0 + tick_y, y)], c.mix(0.6))),
            )
            .map_err(&err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)
}

pub fn cosine_scatter(path: &Path, title: &str, theme: &str, goal: &str, points: &[CosinePoint]) -> Result<()> {
    let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for p in points {
        match groups.iter_mut().find(|g| g.0 == p.group) {
            Some(g) => g.1.push((p.theme, p.goal)),
            None => groups.push((p.group.clone(), vec![(p.theme, p.goal)])),
        }
    }
    scatter(
        path,
        title,
        &format!("cosine to {theme}"),
        &format!("cosine to {goal}"),
        &groups,
        true,
    )
}

pub fn two_pp_scatter(path: &Path, title: &str, report: &CorrelationReport) -> Result<()> {
    let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for p in &report.points {
        let name = format!("{} / {}", p.group, p.novel);
        match groups.iter_mut().find(|g| g.0 == name) {
            Some(g) => g.1.push((p.baseline, p.tuned)),
            None => groups.push((name, vec![(p.baseline, p.tuned)])),
        }
    }
    let c = &report.correlation;
    scatter(
        path,
        &format!("{title} (r = {:.3}, p = {:.3e})", c.r, c.p_value),
        "baseline group log-probability",
        "tuned novel-token log-probability",
        &groups,
        false,
    )
}

pub fn confidence_scatter(path: &Path, title: &str, points: &[ConfidencePoint]) -> Result<()> {
    let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for p in points {
        match groups.iter_mut().find(|g| g.0 == p.role) {
            Some(g) => g.1.push((p.active, p.passive)),
            None => groups.push((p.role.clone(), vec![(p.active, p.passive)])),
        }
    }
    scatter(path, title, "confidence, active", "confidence, passive", &groups, true)
}

/// One line per series over an integer x axis.
pub fn lines(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    prepare(path)?;
    let err = plot_err(path);
    let (x0, x1) = span(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let (y0, y1) = span(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(&err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(&err)?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let c = color(i);
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), c.stroke_width(2)))
            .map_err(&err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], c.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(&err)?;
    root.present().map_err(&err)
}

pub fn trajectory_lines(path: &Path, title: &str, curves: &[ConfidenceCurve]) -> Result<()> {
    let series: Vec<(String, Vec<(f64, f64)>)> = curves
        .iter()
        .map(|c| {
            (
                format!("{} {}", c.subpart, c.role),
                c.points.iter().map(|&(e, v)| (e as f64, v)).collect(),
            )
        })
        .collect();
    lines(path, title, "epoch", "mean confidence", &series)
}

/// Every value of each group as a jittered strip, with the group mean marked.
pub fn strips(path: &Path, title: &str, y_label: &str, groups: &[(String, Vec<f64>)]) -> Result<()> {
    prepare(path)?;
    let err = plot_err(path);
    let (y0, y1) = span(groups.iter().flat_map(|g| g.1.iter().copied()));
    let n = groups.len().max(1);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(-0.5..(n as f64 - 0.5), y0..y1)
        .map_err(&err)?;
    let names: Vec<String> = groups.iter().map(|g| g.0.clone()).collect();
    chart
        .configure_mesh()
        .y_desc(y_label)
        .x_labels(n)
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 {
                names.get(i as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .disable_x_mesh()
        .draw()
        .map_err(&err)?;
    for (i, (_, values)) in groups.iter().enumerate() {
        let c = color(i);
        let k = values.len().max(1) as f64;
        // deterministic jitter spreads the strip evenly
        chart
            .draw_series(values.iter().enumerate().map(|(j, &v)| {
                let dx = (j as f64 / k - 0.5) * 0.5;
                Circle::new((i as f64 + dx, v), 2, c.mix(0.6).filled())
            }))
            .map_err(&err)?;
        if !values.is_empty() {
            let m = values.iter().sum::<f64>() / values.len() as f64;
            chart
                .draw_series(LineSeries::new(
                    [(i as f64 - 0.35, m), (i as f64 + 0.35, m)],
                    BLACK.stroke_width(2),
                ))
                .map_err(&err)?;
        }
    }
    root.present().map_err(&err)
}

/// A bar with a symmetric interval around its height.
#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub label: String,
    pub value: f64,
    pub half_width: f64,
}

pub fn bars(path: &Path, title: &str, y_label: &str, bars: &[Bar]) -> Result<()> {
    prepare(path)?;
    let err = plot_err(path);
    let hi = bars
        .iter()
        .map(|b| b.value + b.half_width)
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let lo = bars
        .iter()
        .map(|b| b.value - b.half_width)
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::min);
    let (lo, hi) = if hi - lo < 1e-9 { (lo, lo + 1.0) } else { (lo, hi) };
    let pad = (hi - lo) * 0.05;
    let n = bars.len().max(1);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(&err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(-0.5..(n as f64 - 0.5), (if lo < 0.0 { lo - pad } else { lo })..(hi + pad))
        .map_err(&err)?;
    let names: Vec<String> = bars.iter().map(|b| b.label.clone()).collect();
    chart
        .configure_mesh()
        .y_desc(y_label)
        .x_labels(n)
        .x_label_formatter(&|x| {
            let i = x.round();
            if (x - i).abs() < 1e-6 && i >= 0.0 {
                names.get(i as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .disable_x_mesh()
        .draw()
        .map_err(&err)?;
    for (i, b) in bars.iter().enumerate() {
        let x = i as f64;
        chart
            .draw_series([Rectangle::new([(x - 0.3, 0.0), (x + 0.3, b.value)], color(i).mix(0.8).filled())])
            .map_err(&err)?;
        let (lo, up) = (b.value - b.half_width, b.value + b.half_width);
        chart
            .draw_series([
                PathElement::new(vec![(x, lo), (x, up)], BLACK),
                PathElement::new(vec![(x - 0.08, lo), (x + 0.08, lo)], BLACK),
                PathElement::new(vec![(x - 0.08, up), (x + 0.08, up)], BLACK),
            ])
            .map_err(&err)?;
    }
    root.present().map_err(&err)
}
