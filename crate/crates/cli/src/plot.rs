use plotters::prelude::*;
use sdc::dataio::read_depth_png;
use sdc::metrics::{error_vs_distance, DistanceBin};
use serde_json::json;

use crate::commands::emit_json;
use crate::{usage, Failure, PlotArgs};

const COLORS: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

/// Mean absolute error per ground-truth distance bin, one line per
/// prediction, with the 5th–95th percentile band shaded.
pub fn plot(a: PlotArgs) -> Result<(), Failure> {
    if !(a.bin_width.is_finite() && a.bin_width > 0.0) {
        return Err(usage("--bin-width must be positive"));
    }
    if !a.label.is_empty() && a.label.len() != a.pred.len() {
        return Err(usage("give one --label per --pred"));
    }
    let gt = read_depth_png(&a.gt)?;
    let max_gt = gt.depth.iter().zip(&gt.validity).filter(|(_, &v)| v).map(|(&z, _)| z).fold(0.0, f64::max);
    let max_depth = a.max_depth.unwrap_or(max_gt);
    if !(max_depth > 0.0) {
        return Err(Failure::Data(anyhow::anyhow!("ground truth has no valid pixels")));
    }
    let n_bins = (max_depth / a.bin_width).ceil().max(1.0) as usize;
    let edges: Vec<f64> = (0..=n_bins).map(|i| i as f64 * a.bin_width).collect();

    let mut series: Vec<(String, Vec<DistanceBin>)> = Vec::new();
    for (i, p) in a.pred.iter().enumerate() {
        let pred = read_depth_png(p)?;
        let bins = error_vs_distance(&pred, &gt, &edges)?;
        let label = a.label.get(i).cloned().unwrap_or_else(|| {
            p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
        });
        series.push((label, bins));
    }
    draw(&a.out, &series, max_depth).map_err(|e| Failure::Data(anyhow::anyhow!("drawing {}: {e}", a.out.display())))?;
    eprintln!("wrote {}", a.out.display());
    if let Some(path) = &a.json {
        let report = json!({
            "series": series.iter().map(|(l, b)| json!({ "label": l, "bins": b })).collect::<Vec<_>>()
        });
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    let summary = json!({ "out": a.out, "series": series.len(), "bins": n_bins });
    emit_json(&summary, None)
}

fn draw(
    path: &std::path::Path,
    series: &[(String, Vec<DistanceBin>)],
    max_depth: f64,
) -> Result<(), Box<dyn std::error::Error>> {
    let y_max = series
        .iter()
        .flat_map(|(_, bins)| bins.iter().filter_map(|b| b.p95.or(b.mean_abs_error)))
        .fold(0.0, f64::max)
        .max(1e-3)
        * 1.05;
    let root = SVGBackend::new(path, (900, 560)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Mean absolute error vs. distance", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(44)
        .y_label_area_size(64)
        .build_cartesian_2d(0.0..max_depth, 0.0..y_max)?;
    chart.configure_mesh().x_desc("ground-truth distance [m]").y_desc("mean absolute error [m]").draw()?;
    for (i, (label, bins)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let filled: Vec<&DistanceBin> = bins.iter().filter(|b| b.count > 0).collect();
        let mid = |b: &DistanceBin| 0.5 * (b.lo + b.hi);
        let mut band: Vec<(f64, f64)> = filled.iter().map(|b| (mid(b), b.p95.unwrap_or(0.0))).collect();
        band.extend(filled.iter().rev().map(|b| (mid(b), b.p05.unwrap_or(0.0))));
        if band.len() >= 3 {
            chart.draw_series(std::iter::once(Polygon::new(band, color.mix(0.15).filled())))?;
        }
        let line: Vec<(f64, f64)> = filled.iter().map(|b| (mid(b), b.mean_abs_error.unwrap_or(0.0))).collect();
        chart
            .draw_series(LineSeries::new(line.clone(), color.stroke_width(2)))?
            .label(label.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        chart.draw_series(line.into_iter().map(|p| Circle::new(p, 3, color.filled())))?;
    }
    chart.configure_series_labels().background_style(WHITE.mix(0.85)).border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}
