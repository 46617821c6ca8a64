//! Deterministic CSV and SVG export of influence matrices.
//!
//! SVG layout: one 8x8 px cell per matrix entry, linear grayscale with
//! high influence dark, optional token annotations beside their rows.
//! Rendering involves no randomness or timestamps, so identical matrices
//! produce identical bytes.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::SaliencyError;

const CELL: usize = 8;
const MARGIN_LEFT: usize = 72;
const MARGIN_TOP: usize = 24;

/// CSV with one row per frame: `frame,<col_prefix>_1..<col_prefix>_N`.
/// Values are written with full round-trip precision.
pub fn write_matrix_csv(
    values: &Array2<f64>,
    col_prefix: &str,
    mut w: impl Write,
) -> std::io::Result<()> {
    write!(w, "frame")?;
    for c in 1..=values.ncols() {
        write!(w, ",{col_prefix}_{c}")?;
    }
    writeln!(w)?;
    for (t, row) in values.rows().into_iter().enumerate() {
        write!(w, "{t}")?;
        for v in row.iter() {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Render a heatmap as an SVG string. `annotations` pairs a row index
/// with a label drawn to the left of that row.
pub fn heatmap_svg(
    values: &Array2<f64>,
    col_title: &str,
    annotations: &[(usize, String)],
) -> Result<String, SaliencyError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(SaliencyError::NonFinite);
    }
    let (rows, cols) = values.dim();
    let width = MARGIN_LEFT + cols * CELL + 8;
    let height = MARGIN_TOP + rows * CELL + 8;
    let max = values.iter().copied().fold(0.0, f64::max);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{MARGIN_LEFT}\" y=\"14\" font-family=\"monospace\" font-size=\"10\">{}</text>\n",
        xml_escape(col_title)
    ));
    for r in 0..rows {
        for c in 0..cols {
            let v = values[(r, c)];
            let level = if max > 0.0 { 255 - (255.0 * v / max).round() as i64 } else { 255 };
            let level = level.clamp(0, 255) as u8;
            let x = MARGIN_LEFT + c * CELL;
            let y = MARGIN_TOP + r * CELL;
            svg.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" \
                 fill=\"#{level:02x}{level:02x}{level:02x}\"/>\n"
            ));
        }
    }
    for (row, label) in annotations {
        let y = MARGIN_TOP + row * CELL + CELL - 1;
        svg.push_str(&format!(
            "<text class=\"annotation\" x=\"2\" y=\"{y}\" font-family=\"monospace\" \
             font-size=\"8\">{}</text>\n",
            xml_escape(label)
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Write `<base>.csv` (exact values) and `<base>.svg` (heatmap); returns
/// both paths.
pub fn export_heatmap(
    values: &Array2<f64>,
    base: &Path,
    col_prefix: &str,
    col_title: &str,
    annotations: &[(usize, String)],
) -> Result<(PathBuf, PathBuf), SaliencyError> {
    if let Some(parent) = base.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let csv_path = base.with_extension("csv");
    let svg_path = base.with_extension("svg");
    let mut csv = Vec::new();
    write_matrix_csv(values, col_prefix, &mut csv)?;
    std::fs::write(&csv_path, csv)?;
    let svg = heatmap_svg(values, col_title, annotations)?;
    std::fs::write(&svg_path, svg)?;
    Ok((csv_path, svg_path))
}
