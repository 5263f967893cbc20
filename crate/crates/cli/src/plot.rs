//! Static SVG plots for `vclip report`.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;
use vclip_core::{Error, EvalReport, Result};

use crate::commands::LossCurveFile;

const SIZE: (u32, u32) = (720, 440);

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

/// One line per training run: loss against optimizer step.
pub fn loss_curves(curves: &[LossCurveFile], path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let steps = curves.iter().map(|c| c.loss_curve.len()).max().unwrap_or(1).max(2);
    let (lo, hi) = range(curves.iter().flat_map(|c| c.loss_curve.iter().copied()));
    let mut chart = ChartBuilder::on(&root)
        .caption("training loss", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(32)
        .y_label_area_size(48)
        .build_cartesian_2d(0f64..(steps - 1) as f64, lo..hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("step")
        .y_desc("loss")
        .draw()
        .map_err(plot_err)?;
    for (i, c) in curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let label = format!("{} seed {} ({})", c.method, c.seed, &c.config_hash[..c.config_hash.len().min(8)]);
        chart
            .draw_series(LineSeries::new(
                c.loss_curve.iter().enumerate().map(|(s, &l)| (s as f64, l)),
                color,
            ))
            .map_err(plot_err)?
            .label(label)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

/// Mean few-shot top-1 against K, one line per method.
pub fn accuracy_vs_k(reports: &[&EvalReport], path: &Path) -> Result<()> {
    let mut by_method: BTreeMap<&str, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in reports {
        if let (Some(k), Some(top1)) = (r.shots, r.mean("top1")) {
            by_method.entry(&r.method).or_default().entry(k).or_default().push(top1);
        }
    }
    let ks: Vec<usize> = by_method.values().flat_map(|m| m.keys().copied()).collect();
    let k_max = ks.iter().copied().max().unwrap_or(16).max(2) as f64;
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("few-shot top-1 vs K", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(32)
        .y_label_area_size(48)
        .build_cartesian_2d(0f64..k_max + 1.0, 0f64..100f64)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("K (shots per class)")
        .y_desc("top-1 (%)")
        .draw()
        .map_err(plot_err)?;
    for (i, (method, points)) in by_method.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let series: Vec<(f64, f64)> = points
            .iter()
            .map(|(&k, v)| (k as f64, v.iter().sum::<f64>() / v.len() as f64))
            .collect();
        chart
            .draw_series(LineSeries::new(series.clone(), color))
            .map_err(plot_err)?
            .label(*method)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        chart
            .draw_series(series.into_iter().map(|p| Circle::new(p, 3, color.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}
