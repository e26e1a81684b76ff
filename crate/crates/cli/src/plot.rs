//! Minimal SVG line chart: observed series plus selected quantile paths.

use std::fmt::Write;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 40.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series<'a> {
    pub label: String,
    pub values: &'a [f64],
}

fn polyline(values: &[f64], x0: usize, n: usize, lo: f64, hi: f64) -> String {
    let span = (hi - lo).max(1e-12);
    let step = (WIDTH - 2.0 * MARGIN) / (n.max(2) - 1) as f64;
    let mut pts = String::new();
    for (i, v) in values.iter().enumerate() {
        let x = MARGIN + (x0 + i) as f64 * step;
        let y = HEIGHT - MARGIN - (v - lo) / span * (HEIGHT - 2.0 * MARGIN);
        if i > 0 {
            pts.push(' ');
        }
        write!(pts, "{x:.2},{y:.2}").unwrap();
    }
    pts
}

/// `observed` spans the full x range; each path starts at `path_offset`.
pub fn fan_chart(observed: &[f64], paths: &[Series<'_>], path_offset: usize) -> String {
    let all = observed
        .iter()
        .chain(paths.iter().flat_map(|s| s.values.iter()));
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let n = observed.len();
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<line x1="{MARGIN}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    )
    .unwrap();
    writeln!(
        svg,
        r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{b}" stroke="black"/>"#,
        b = HEIGHT - MARGIN
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="4" y="{MARGIN}" font-size="10">{hi:.3}</text><text x="4" y="{b}" font-size="10">{lo:.3}</text>"#,
        b = HEIGHT - MARGIN
    )
    .unwrap();
    writeln!(
        svg,
        r##"<polyline fill="none" stroke="#555555" stroke-width="1" points="{}"/>"##,
        polyline(observed, 0, n, lo, hi)
    )
    .unwrap();
    for (k, s) in paths.iter().enumerate() {
        let colour = COLOURS[k % COLOURS.len()];
        writeln!(
            svg,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            polyline(s.values, path_offset, n, lo, hi)
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{x}" y="{y}" font-size="11" fill="{colour}">{}</text>"#,
            s.label,
            x = WIDTH - MARGIN - 60.0,
            y = MARGIN + 14.0 * k as f64
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}
