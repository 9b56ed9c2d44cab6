use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;

use crate::{BenchError, Result};

/// Font registration for the pure-Rust glyph renderer; looks through the
/// usual system font locations once.
fn ensure_font() -> Result<()> {
    use std::sync::OnceLock;
    static FONT: OnceLock<std::result::Result<(), String>> = OnceLock::new();
    FONT.get_or_init(|| {
        let candidates = [
            "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
            "/usr/share/fonts/truetype/liberation/LiberationSans-Regular.ttf",
            "/usr/share/fonts/TTF/DejaVuSans.ttf",
            "/System/Library/Fonts/Helvetica.ttc",
        ];
        for path in candidates {
            if let Ok(bytes) = std::fs::read(path) {
                let leaked: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if plotters::style::register_font(
                    "sans-serif",
                    plotters::style::FontStyle::Normal,
                    leaked,
                )
                .is_ok()
                {
                    return Ok(());
                }
            }
        }
        Err("no usable TTF font found for plot labels".to_string())
    })
    .clone()
    .map_err(BenchError::Plot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotAxis {
    /// Acceleration factor on the x axis.
    Accel,
    /// Reconstruction pixel size on the x axis.
    Shift,
}

impl PlotAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "r" | "R" | "accel" => Ok(PlotAxis::Accel),
            "shift" | "v_recon" => Ok(PlotAxis::Shift),
            other => Err(BenchError::Config(format!(
                "unknown plot axis '{other}', expected accel|shift"
            ))),
        }
    }

    fn label(self) -> &'static str {
        match self {
            PlotAxis::Accel => "acceleration R",
            PlotAxis::Shift => "reconstruction pixel size (mm)",
        }
    }
}

/// PSNR-vs-x line plot grouped by (method, training pixel size), one series
/// per group. Emits a PNG; a header-only CSV produces empty axes.
pub fn plot_curves(csv: &Path, axis: PlotAxis, out: &Path) -> Result<()> {
    ensure_font()?;
    let text = std::fs::read_to_string(csv)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| BenchError::Config("empty CSV".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 10 || cols[5] != "psnr_db" {
        return Err(BenchError::Config("CSV missing required columns".into()));
    }

    // (method, v_train) -> x -> psnr values
    let mut groups: BTreeMap<(String, String), BTreeMap<i64, Vec<f64>>> = BTreeMap::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 10 || !f[9].is_empty() {
            continue;
        }
        let Ok(psnr) = f[5].parse::<f64>() else {
            continue; // identical or missing
        };
        // columns: 3 = v_recon_mm, 4 = accel
        let x_val = match axis {
            PlotAxis::Accel => f[4].parse::<f64>().ok(),
            PlotAxis::Shift => f[3].parse::<f64>().ok(),
        };
        let Some(x) = x_val else { continue };
        let key = (f[1].to_string(), f[2].to_string());
        groups
            .entry(key)
            .or_default()
            .entry((x * 1000.0).round() as i64)
            .or_default()
            .push(psnr);
    }

    let root = BitMapBackend::new(out, (900, 600)).into_drawing_area();
    root.fill(&WHITE)
        .map_err(|e| BenchError::Plot(e.to_string()))?;

    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for series in groups.values() {
        for (&xk, ys) in series {
            let x = xk as f64 / 1000.0;
            let mean = ys.iter().sum::<f64>() / ys.len() as f64;
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(mean);
            y_max = y_max.max(mean);
        }
    }
    if !x_min.is_finite() {
        // nothing to draw; keep a valid empty-axes image
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    let pad = ((y_max - y_min) * 0.1).max(1.0);
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(45)
        .y_label_area_size(55)
        .build_cartesian_2d(
            x_min - 0.05 * (x_max - x_min).max(1.0)..x_max + 0.05 * (x_max - x_min).max(1.0),
            y_min - pad..y_max + pad,
        )
        .map_err(|e| BenchError::Plot(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc(axis.label())
        .y_desc("PSNR (dB)")
        .draw()
        .map_err(|e| BenchError::Plot(e.to_string()))?;

    let palette = [
        RGBColor(31, 119, 180),
        RGBColor(255, 127, 14),
        RGBColor(44, 160, 44),
        RGBColor(214, 39, 40),
        RGBColor(148, 103, 189),
        RGBColor(140, 86, 75),
        RGBColor(227, 119, 194),
        RGBColor(127, 127, 127),
    ];
    for (gi, ((method, v_train), series)) in groups.iter().enumerate() {
        let color = palette[gi % palette.len()];
        let pts: Vec<(f64, f64)> = series
            .iter()
            .map(|(&xk, ys)| {
                (
                    xk as f64 / 1000.0,
                    ys.iter().sum::<f64>() / ys.len() as f64,
                )
            })
            .collect();
        let label = format!("{method} (train {v_train} mm)");
        chart
            .draw_series(LineSeries::new(pts.iter().cloned(), color.stroke_width(2)))
            .map_err(|e| BenchError::Plot(e.to_string()))?
            .label(label)
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
            });
        chart
            .draw_series(pts.iter().map(|&(x, y)| Circle::new((x, y), 3, color.filled())))
            .map_err(|e| BenchError::Plot(e.to_string()))?;
    }
    if !groups.is_empty() {
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .background_style(WHITE.mix(0.85))
            .draw()
            .map_err(|e| BenchError::Plot(e.to_string()))?;
    }
    root.present().map_err(|e| BenchError::Plot(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::CSV_HEADER;

    #[test]
    fn header_only_csv_renders_empty_axes() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("m.csv");
        std::fs::write(&csv, format!("{CSV_HEADER}\n")).unwrap();
        let out = dir.path().join("plot.png");
        plot_curves(&csv, PlotAxis::Accel, &out).unwrap();
        let bytes = std::fs::read(&out).unwrap();
        assert!(bytes.len() > 8 && &bytes[1..4] == b"PNG");
    }

    #[test]
    fn groups_become_series() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("m.csv");
        let mut text = format!("{CSV_HEADER}\n");
        for (m, vt) in [("a", "1.0"), ("b", "1.0"), ("a", "2.0")] {
            for r in [4, 8] {
                text.push_str(&format!(
                    "vol0,{m},{vt},1.0000,{r},{}.0,0.9,1.0,42,\n",
                    20 + r
                ));
            }
        }
        std::fs::write(&csv, text).unwrap();
        let out = dir.path().join("plot.png");
        plot_curves(&csv, PlotAxis::Accel, &out).unwrap();
        assert!(out.exists());
    }
}
