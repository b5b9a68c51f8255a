//! Static PNG line charts. The charts carry no text so that no font
//! backend is needed; the file name says what is plotted.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{CliError, Result};

const SIZE: (u32, u32) = (640, 360);

fn plot_err(e: impl std::fmt::Display) -> CliError {
    CliError::Plot(e.to_string())
}

/// Draws `ys` against frame index with a light grid.
pub fn line_chart(path: &Path, ys: &[f64]) -> Result<()> {
    if ys.is_empty() {
        return Err(CliError::Plot("nothing to plot".into()));
    }
    let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 1.0f64.max(hi.abs() * 0.05) };
    let x_hi = (ys.len().max(2) - 1) as f64;

    let root = BitMapBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(16)
        .build_cartesian_2d(0f64..x_hi, (lo - pad)..(hi + pad))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .disable_axes()
        .light_line_style(RGBColor(225, 225, 225))
        .draw()
        .map_err(plot_err)?;
    let pts: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect();
    chart.draw_series(LineSeries::new(pts.clone(), BLUE.stroke_width(2))).map_err(plot_err)?;
    chart.draw_series(pts.iter().map(|&p| Circle::new(p, 3, BLUE.filled()))).map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_a_png() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("psnr.png");
        line_chart(&p, &[30.0, 31.5, 31.0]).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[1..4], b"PNG");
        line_chart(&p, &[5.0]).unwrap();
        assert!(line_chart(&p, &[]).is_err());
    }
}
