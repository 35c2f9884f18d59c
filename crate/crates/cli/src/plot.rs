// SPDX-License-Identifier: Apache-2.0

//! SVG figures regenerated from the CSV artifacts listed in a run index.

use std::path::Path;

use plotters::prelude::*;

use crate::artifacts::{write_atomic, ArtifactEntry, ArtifactIndex, Csv};
use crate::error::{CliError, CliResult};

const SIZE: (u32, u32) = (800, 560);
const PALETTE: [RGBColor; 4] = [BLUE, RED, GREEN, MAGENTA];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
    dashed: bool,
}

/// Draws every plottable CSV listed in `index_path` and records the figures in the index.
/// Returns the number of figures written; unreadable artifacts become index warnings.
pub fn plot_index(index_path: &Path) -> CliResult<usize> {
    let mut index = ArtifactIndex::load(index_path)?;
    let root = index_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut added = vec![];
    for entry in &index.files {
        let family = match entry.family.as_deref() {
            Some(f @ ("spectrum" | "cauchy" | "comparison")) if entry.kind == "csv" => f,
            _ => continue,
        };
        let path = root.join(&entry.path);
        let csv = match std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e)).and_then(|t| Csv::parse(&t))
        {
            Ok(c) => c,
            Err(e) => {
                index.warnings.push(format!("skipped {}: {e}", entry.path));
                continue;
            }
        };
        let (title, series) = match family {
            "spectrum" => spectrum_series(&csv),
            "cauchy" => cauchy_series(&csv),
            _ => comparison_series(&csv),
        };
        let svg_path = entry.path.trim_end_matches(".csv").to_string() + ".svg";
        let title = format!("{} {}", entry.experiment, title);
        match render(&title, &series) {
            Ok(svg) => {
                let out = root.join(&svg_path);
                write_atomic(&out, svg.as_bytes()).map_err(|e| CliError::io(&out, e))?;
                added.push(ArtifactEntry {
                    path: svg_path,
                    experiment: entry.experiment.clone(),
                    kind: "plot".into(),
                    family: Some(family.into()),
                    grid: entry.grid.clone(),
                });
            }
            Err(e) => index.warnings.push(format!("could not plot {}: {e}", entry.path)),
        }
    }
    let count = added.len();
    for a in added {
        index.files.retain(|f| f.path != a.path);
        index.files.push(a);
    }
    index.files.sort_by(|a, b| a.path.cmp(&b.path));
    index.save(&root)?;
    Ok(count)
}

fn positive(xs: &[f64], ys: &[f64]) -> Vec<(f64, f64)> {
    xs.iter().zip(ys).filter(|(x, y)| **x > 0.0 && **y > 0.0 && y.is_finite()).map(|(x, y)| (*x, *y)).collect()
}

fn spectrum_series(csv: &Csv) -> (String, Vec<Series>) {
    let n = csv.column("n").unwrap_or_default();
    let mut out = vec![];
    for col in csv.header.iter().filter(|h| h.as_str() != "n") {
        let ys = csv.column(col).unwrap_or_default();
        out.push(Series { label: col.clone(), points: positive(&n, &ys), dashed: false });
    }
    // reference slope n^{-1/p} anchored at the first singular value
    let threshold =
        csv.meta_value("threshold_p").and_then(|v| v.parse::<f64>().ok()).filter(|p| p.is_finite() && *p > 0.0);
    if let (Some(p), Some(first)) = (threshold, out.first().and_then(|s| s.points.first().copied())) {
        let pts = n.iter().filter(|x| **x > 0.0).map(|&x| (x, first.1 * (x / first.0).powf(-1.0 / p))).collect();
        out.push(Series { label: format!("n^(-1/{p:.3})"), points: pts, dashed: true });
    }
    let slope = csv.meta_value("fitted_slope").and_then(|v| v.parse::<f64>().ok());
    let window = csv
        .meta_value("fit_window")
        .and_then(|w| w.split_once(".."))
        .and_then(|(a, b)| Some((a.parse::<usize>().ok()?, b.parse::<usize>().ok()?)));
    if let (Some(slope), Some((a, b)), Some(first)) = (slope, window, out.first()) {
        if let Some(&(xa, ya)) = first.points.iter().find(|p| p.0 == a as f64) {
            let pts = vec![(xa, ya), (b as f64, ya * (b as f64 / xa).powf(slope))];
            out.push(Series { label: format!("fitted slope {slope:.3} on [{a}, {b}]"), points: pts, dashed: true });
        }
    }
    let title = csv
        .meta_value("operator")
        .map(|o| format!("singular values of {o}"))
        .unwrap_or_else(|| "singular values".into());
    (title, out)
}

fn cauchy_series(csv: &Csv) -> (String, Vec<Series>) {
    let t = csv.column("t_end").unwrap_or_default();
    let inc = csv.column("increment").unwrap_or_default();
    let mut out = vec![Series { label: "increment".into(), points: positive(&t, &inc), dashed: false }];
    if let Some(tol) = csv.meta_value("tolerance").and_then(|v| v.parse::<f64>().ok()) {
        let pts = t.iter().map(|&x| (x, tol)).collect();
        out.push(Series { label: "tolerance".into(), points: pts, dashed: true });
    }
    ("Cauchy increments".into(), out)
}

fn comparison_series(csv: &Csv) -> (String, Vec<Series>) {
    let t = csv.column("t").unwrap_or_default();
    let mut out = vec![];
    for col in ["displacement", "velocity", "combined"] {
        if let Some(ys) = csv.column(col) {
            out.push(Series { label: col.into(), points: positive(&t, &ys), dashed: false });
        }
    }
    ("solution comparison".into(), out)
}

/// Log-log line chart of every series.
fn render(title: &str, series: &[Series]) -> Result<String, String> {
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    if all.is_empty() {
        return Err("no positive data".into());
    }
    let (mut x0, mut x1, mut y0, mut y1) = all.iter().fold((f64::MAX, f64::MIN, f64::MAX, f64::MIN), |a, p| {
        (a.0.min(p.0), a.1.max(p.0), a.2.min(p.1), a.3.max(p.1))
    });
    if x1 <= x0 {
        x0 *= 0.5;
        x1 = x1 * 2.0 + 1.0;
    }
    if y1 <= y0 {
        y0 *= 0.5;
        y1 *= 2.0;
    }
    let mut svg = String::new();
    {
        let backend = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        backend.fill(&WHITE).map_err(|e| e.to_string())?;
        let mut builder = ChartBuilder::on(&backend);
        builder.caption(title, ("sans-serif", 20)).margin(16).x_label_area_size(40).y_label_area_size(70);
        let mut chart =
            builder.build_cartesian_2d((x0..x1).log_scale(), (y0..y1).log_scale()).map_err(|e| e.to_string())?;
        chart.configure_mesh().y_label_formatter(&|v| format!("{v:.0e}")).draw().map_err(|e| e.to_string())?;
        for (i, s) in series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let anno = if s.dashed {
                chart.draw_series(DashedLineSeries::new(s.points.iter().copied(), 6, 4, color.stroke_width(1)))
            } else {
                chart.draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            }
            .map_err(|e| e.to_string())?;
            anno.label(s.label.clone()).legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| e.to_string())?;
        backend.present().map_err(|e| e.to_string())?;
    }
    Ok(svg)
}
