//! Minimal SVG bar charts for the noise-analysis report panels.

use std::io::Write;
use std::path::Path;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Render labeled bars to an SVG file. Values are scaled to the maximum;
/// an empty series still produces a valid (axis-only) chart.
pub fn write_bar_chart(
    path: &Path,
    title: &str,
    bars: &[(String, f64)],
) -> std::io::Result<()> {
    let max = bars.iter().map(|(_, v)| *v).fold(0.0f64, f64::max).max(1e-9);
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let n = bars.len().max(1) as f64;
    let slot = plot_w / n;
    let bar_w = (slot * 0.7).max(1.0);

    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )?;
    writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#)?;
    writeln!(
        out,
        r#"<text x="{}" y="24" font-family="monospace" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        esc(title)
    )?;
    // Axes
    writeln!(
        out,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    )?;
    writeln!(
        out,
        r#"<text x="{}" y="{}" font-family="monospace" font-size="10" text-anchor="end">{max:.3}</text>"#,
        MARGIN - 4.0,
        MARGIN + 4.0
    )?;
    for (i, (label, value)) in bars.iter().enumerate() {
        let h = (value / max) * plot_h;
        let x = MARGIN + i as f64 * slot + (slot - bar_w) / 2.0;
        let y = HEIGHT - MARGIN - h;
        writeln!(
            out,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{bar_w:.1}" height="{h:.1}" fill="#4878a8"/>"##
        )?;
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="monospace" font-size="10" text-anchor="middle">{}</text>"#,
            x + bar_w / 2.0,
            HEIGHT - MARGIN + 14.0,
            esc(label)
        )?;
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="monospace" font-size="10" text-anchor="middle">{}</text>"#,
            x + bar_w / 2.0,
            (y - 4.0).max(12.0),
            format_value(*value)
        )?;
    }
    writeln!(out, "</svg>")?;
    out.flush()
}

fn format_value(v: f64) -> String {
    if (v.fract()).abs() < 1e-9 {
        format!("{}", v as i64)
    } else {
        format!("{v:.3}")
    }
}
