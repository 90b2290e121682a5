//! Minimal deterministic SVG line charts.

use std::fmt::Write as _;

use crate::metrics::MetricSeries;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders `series` against `t`. With `log_y`, non-positive values are
/// dropped and the polyline is broken at them.
pub fn line_chart(series: &MetricSeries, log_y: bool) -> String {
    let points: Vec<(f64, Option<f64>)> = series
        .values
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let t = (k + 1) as f64;
            let y = if log_y {
                (v > 0.0).then(|| v.log10())
            } else {
                v.is_finite().then_some(v)
            };
            (t, y)
        })
        .collect();
    let ys: Vec<f64> = points.iter().filter_map(|p| p.1).collect();
    let (mut y_min, mut y_max) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
        (lo.min(y), hi.max(y))
    });
    if ys.is_empty() {
        (y_min, y_max) = (0.0, 1.0);
    }
    if y_max - y_min < 1e-12 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let t_max = (series.len().max(2)) as f64;
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |t: f64| LEFT + (t - 1.0) / (t_max - 1.0) * plot_w;
    let sy = |y: f64| TOP + (y_max - y) / (y_max - y_min) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let title = if log_y {
        format!("{} (log10)", series.name)
    } else {
        series.name.clone()
    };
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(&title)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let y = y_min + (y_max - y_min) * k as f64 / 4.0;
        let label = if log_y { format!("1e{y:.1}") } else { format!("{y:.3e}") };
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{py:.2}" x2="{x2}" y2="{py:.2}" stroke="#ddd"/><text x="{tx}" y="{ty:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{label}</text>"##,
            py = sy(y),
            x2 = WIDTH - RIGHT,
            tx = LEFT - 4.0,
            ty = sy(y) + 3.0,
        );
    }
    for k in 0..=4 {
        let t = 1.0 + (t_max - 1.0) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10" text-anchor="middle">{:.0}</text>"#,
            sx(t),
            HEIGHT - BOTTOM + 16.0,
            t
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">t</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );

    let mut segment = String::new();
    let flush = |segment: &mut String, out: &mut String| {
        if !segment.is_empty() {
            let _ = writeln!(
                out,
                r##"<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{}"/>"##,
                segment.trim_end()
            );
            segment.clear();
        }
    };
    for &(t, y) in &points {
        match y {
            Some(y) => {
                let _ = write!(segment, "{:.2},{:.2} ", sx(t), sy(y));
            }
            None => flush(&mut segment, &mut out),
        }
    }
    flush(&mut segment, &mut out);
    out.push_str("</svg>\n");
    out
}
