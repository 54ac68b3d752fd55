//! Static PNG plots for sweeps and regions.

use std::path::Path;

use plotters::prelude::*;

use super::{PerformancePoint, RegionResult};
use crate::error::{Error, Result};

const COLORS: [RGBColor; 4] = [
    full_palette::BLUE,
    full_palette::RED,
    full_palette::GREEN_700,
    full_palette::ORANGE_700,
];

fn draw_error(e: impl std::fmt::Display) -> Error {
    Error::config(format!("plot failed: {e}"))
}

/// The ab_glyph text backend has no font discovery; register a TTF once,
/// from `SFJSCC_FONT` or the usual DejaVu locations.
fn ensure_font() -> Result<()> {
    static FONT: std::sync::OnceLock<std::result::Result<(), String>> = std::sync::OnceLock::new();
    FONT.get_or_init(|| {
        let candidates = std::env::var("SFJSCC_FONT").ok().into_iter().chain(
            [
                "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf".to_string(),
                "/usr/share/fonts/TTF/DejaVuSans.ttf".to_string(),
                "/Library/Fonts/Arial Unicode.ttf".to_string(),
            ],
        );
        for path in candidates {
            if let Ok(bytes) = std::fs::read(&path) {
                let leaked: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                return plotters::style::register_font("sans-serif", plotters::style::FontStyle::Normal, leaked)
                    .map_err(|_| format!("invalid font data in {path}"));
            }
        }
        Err("no TTF found; set SFJSCC_FONT to a font file".to_string())
    })
    .clone()
    .map_err(Error::Config)
}

/// PSNR-vs-SNR lines, one pair of series (both users) per scheme.
pub fn sweep_plot(path: &Path, title: &str, series: &[(String, Vec<PerformancePoint>)]) -> Result<()> {
    ensure_font()?;
    let all: Vec<&PerformancePoint> = series.iter().flat_map(|(_, p)| p).collect();
    if all.is_empty() {
        return Err(Error::config("nothing to plot"));
    }
    let (x_min, x_max) = min_max(all.iter().map(|p| p.snr1_db));
    let (y_min, y_max) = min_max(all.iter().flat_map(|p| [p.psnr1_db, p.psnr2_db]));
    let root = BitMapBackend::new(path, (800, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 24))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(pad(x_min, x_max), pad(y_min, y_max))
        .map_err(draw_error)?;
    chart
        .configure_mesh()
        .x_desc("SNR1 (dB)")
        .y_desc("PSNR (dB)")
        .draw()
        .map_err(draw_error)?;
    for (i, (name, points)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        for (user, dashed) in [(1, false), (2, true)] {
            let pts: Vec<(f64, f64)> = points
                .iter()
                .map(|p| (p.snr1_db, if user == 1 { p.psnr1_db } else { p.psnr2_db }))
                .collect();
            let style = if dashed { color.stroke_width(1) } else { color.stroke_width(2) };
            chart
                .draw_series(LineSeries::new(pts.clone(), style))
                .map_err(draw_error)?
                .label(format!("{name} user{user}"))
                .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color));
            chart
                .draw_series(pts.iter().map(|&xy| Circle::new(xy, 3, color.filled())))
                .map_err(draw_error)?;
        }
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(draw_error)?;
    root.present().map_err(draw_error)?;
    Ok(())
}

/// The semantic performance region: (PSNR1, PSNR2) per ratio, one polyline
/// per scheme.
pub fn region_plot(path: &Path, regions: &[RegionResult]) -> Result<()> {
    ensure_font()?;
    let all: Vec<&PerformancePoint> = regions.iter().flat_map(|r| &r.points).collect();
    if all.is_empty() {
        return Err(Error::config("nothing to plot"));
    }
    let (x_min, x_max) = min_max(all.iter().map(|p| p.psnr1_db));
    let (y_min, y_max) = min_max(all.iter().map(|p| p.psnr2_db));
    let root = BitMapBackend::new(path, (700, 700)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Semantic performance region", ("sans-serif", 24))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(pad(x_min, x_max), pad(y_min, y_max))
        .map_err(draw_error)?;
    chart
        .configure_mesh()
        .x_desc("PSNR1 (dB)")
        .y_desc("PSNR2 (dB)")
        .draw()
        .map_err(draw_error)?;
    for (i, region) in regions.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<(f64, f64)> =
            region.points.iter().map(|p| (p.psnr1_db, p.psnr2_db)).collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(draw_error)?
            .label(region.scheme.to_string())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color));
        chart
            .draw_series(pts.iter().map(|&xy| Circle::new(xy, 4, color.filled())))
            .map_err(draw_error)?;
    }
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(draw_error)?;
    root.present().map_err(draw_error)?;
    Ok(())
}

/// Epoch-mean training loss curve.
pub fn loss_plot(path: &Path, losses: &[f64]) -> Result<()> {
    ensure_font()?;
    if losses.is_empty() {
        return Err(Error::config("nothing to plot"));
    }
    let (y_min, y_max) = min_max(losses.iter().copied());
    let root = BitMapBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_error)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Training loss", ("sans-serif", 24))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0f64..losses.len() as f64, pad(y_min, y_max))
        .map_err(draw_error)?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc("mean loss")
        .draw()
        .map_err(draw_error)?;
    chart
        .draw_series(LineSeries::new(
            losses.iter().enumerate().map(|(i, &l)| (i as f64, l)),
            full_palette::BLUE.stroke_width(2),
        ))
        .map_err(draw_error)?;
    root.present().map_err(draw_error)?;
    Ok(())
}

fn min_max(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn pad(lo: f64, hi: f64) -> std::ops::Range<f64> {
    let span = (hi - lo).max(1e-6);
    lo - 0.05 * span..hi + 0.05 * span
}
