//! Minimal self-contained SVG line plots and heatmaps. CSV stays the canonical output.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{invalid_input, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Axes {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Plot {
    Lines {
        axes: Axes,
        series: Vec<Series>,
    },
    /// `values[row][col]`; rows are drawn top to bottom.
    Heatmap {
        axes: Axes,
        row_labels: Vec<String>,
        col_labels: Vec<String>,
        values: Vec<Vec<f64>>,
    },
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn header(out: &mut String, axes: &Axes) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
"#,
        WIDTH / 2.0,
        escape(&axes.title),
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(&axes.x_label),
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(&axes.y_label)
    );
}

fn render_lines(axes: &Axes, series: &[Series]) -> Result<String> {
    let finite = || {
        series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|(x, y)| x.is_finite() && y.is_finite())
    };
    if finite().next().is_none() {
        return Err(invalid_input("nothing to plot"));
    }
    let (x0, x1) = span(
        finite().map(|p| p.0).fold(f64::INFINITY, f64::min),
        finite().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = span(
        finite().map(|p| p.1).fold(f64::INFINITY, f64::min),
        finite().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
    );
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    header(&mut out, axes);
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    for (v, x, y, anchor) in [
        (x0, px(x0), HEIGHT - MARGIN + 16.0, "start"),
        (x1, px(x1), HEIGHT - MARGIN + 16.0, "end"),
    ] {
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}">{v:.4}</text>"#
        );
    }
    for (v, y) in [(y0, py(y0)), (y1, py(y1))] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.4}</text>"#,
            MARGIN - 4.0,
            y + 4.0
        );
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if pts.len() == 1 {
            let (x, y) = pts[0].split_once(',').unwrap();
            let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        } else if !pts.is_empty() {
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                pts.join(" ")
            );
        }
        let ly = MARGIN + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{color}" text-anchor="end">{}</text>"#,
            WIDTH - MARGIN - 6.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn render_heatmap(
    axes: &Axes,
    rows: &[String],
    cols: &[String],
    values: &[Vec<f64>],
) -> Result<String> {
    if values.is_empty() || values[0].is_empty() {
        return Err(invalid_input("nothing to plot"));
    }
    if values.len() != rows.len() || values.iter().any(|r| r.len() != cols.len()) {
        return Err(invalid_input("heatmap labels do not match the value grid"));
    }
    let finite: Vec<f64> = values
        .iter()
        .flatten()
        .cloned()
        .filter(|v| v.is_finite())
        .collect();
    let lo = finite.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if finite.is_empty() {
        (0.0, 1.0)
    } else {
        span(lo, hi)
    };
    let cw = (WIDTH - 2.0 * MARGIN) / cols.len() as f64;
    let ch = (HEIGHT - 2.0 * MARGIN) / rows.len() as f64;

    let mut out = String::new();
    header(&mut out, axes);
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let fill = if v.is_finite() {
                let t = (v - lo) / (hi - lo);
                format!(
                    "rgb({},{},{})",
                    (255.0 * t) as u8,
                    (80.0 + 100.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8,
                    (255.0 * (1.0 - t)) as u8
                )
            } else {
                "#cccccc".to_string()
            };
            let (x, y) = (MARGIN + j as f64 * cw, MARGIN + i as f64 * ch);
            let _ = writeln!(
                out,
                r#"<rect x="{x:.1}" y="{y:.1}" width="{cw:.1}" height="{ch:.1}" fill="{fill}"/>"#
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{v:.3}</text>"#,
                x + cw / 2.0,
                y + ch / 2.0 + 4.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN - 4.0,
            MARGIN + (i as f64 + 0.5) * ch + 4.0,
            escape(&rows[i])
        );
    }
    for (j, c) in cols.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            MARGIN + (j as f64 + 0.5) * cw,
            HEIGHT - MARGIN + 16.0,
            escape(c)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn render_svg(plot: &Plot) -> Result<String> {
    match plot {
        Plot::Lines { axes, series } => render_lines(axes, series),
        Plot::Heatmap {
            axes,
            row_labels,
            col_labels,
            values,
        } => render_heatmap(axes, row_labels, col_labels, values),
    }
}

pub fn emit_svg(plot: &Plot, path: &Path) -> Result<()> {
    let text = render_svg(plot)?;
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axes() -> Axes {
        Axes {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
        }
    }

    #[test]
    fn empty_series_rejected() {
        assert!(render_svg(&Plot::Lines {
            axes: axes(),
            series: vec![]
        })
        .is_err());
        let s = Series {
            name: "a".into(),
            points: vec![],
        };
        assert!(render_svg(&Plot::Lines {
            axes: axes(),
            series: vec![s]
        })
        .is_err());
    }

    #[test]
    fn single_point_is_a_marker() {
        let s = Series {
            name: "a".into(),
            points: vec![(1.0, 2.0)],
        };
        let svg = render_svg(&Plot::Lines {
            axes: axes(),
            series: vec![s],
        })
        .unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(!svg.contains("<polyline"));
    }

    #[test]
    fn heatmap_cells() {
        let svg = render_svg(&Plot::Heatmap {
            axes: axes(),
            row_labels: vec!["r0".into(), "r1".into()],
            col_labels: vec!["c0".into(), "c1".into(), "c2".into()],
            values: vec![vec![0.0, 1.0, 2.0], vec![3.0, f64::NAN, 5.0]],
        })
        .unwrap();
        assert_eq!(svg.matches("<rect x=").count(), 6);
    }
}
