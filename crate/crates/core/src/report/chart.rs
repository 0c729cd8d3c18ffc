use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::MetricsTimeline;

/// Named line of `(episode, score)` points.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartSeries {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl ChartSeries {
    pub fn from_timeline(name: &str, timeline: &MetricsTimeline) -> Self {
        Self {
            name: name.to_owned(),
            points: timeline.points.iter().map(|p| (p.episode as f64, p.score)).collect(),
        }
    }

    /// Pointwise mean over timelines, truncated to the shortest one.
    pub fn seed_mean(name: &str, timelines: &[&MetricsTimeline]) -> Self {
        let len = timelines.iter().map(|t| t.points.len()).min().unwrap_or(0);
        let points = (0..len)
            .map(|i| {
                let x = timelines[0].points[i].episode as f64;
                let y = timelines.iter().map(|t| t.points[i].score).sum::<f64>() / timelines.len() as f64;
                (x, y)
            })
            .collect();
        Self {
            name: name.to_owned(),
            points,
        }
    }
}

pub const WIDTH: f64 = 760.0;
pub const HEIGHT: f64 = 420.0;
/// Plot rectangle as (left, top, right, bottom) in pixels.
pub const PLOT: (f64, f64, f64, f64) = (70.0, 20.0, 580.0, 360.0);

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_owned() } else { s.to_owned() }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Standalone SVG line chart with one polyline per series.
pub fn render_chart(series: &[ChartSeries], x_label: &str, y_label: &str) -> Result<String> {
    if series.is_empty() || series.iter().any(|s| s.points.is_empty()) {
        return Err(Error::Usage("chart needs at least one series and no empty series".into()));
    }
    if series.iter().flat_map(|s| &s.points).any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Domain("chart data must be finite".into()));
    }
    let (x0, x1) = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let (left, top, right, bottom) = PLOT;
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (right - left);
    let py = |y: f64| bottom - (y - y0) / (y1 - y0) * (bottom - top);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<g class="axes" stroke="black" stroke-width="1"><line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}"/><line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}"/></g>"#
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let (tx, ty) = (px(xv), py(yv));
        let _ = writeln!(
            s,
            r#"<line x1="{tx:.2}" y1="{bottom}" x2="{tx:.2}" y2="{:.2}" stroke="black"/><text x="{tx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            bottom + 5.0,
            bottom + 18.0,
            tick_label(xv)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ty:.2}" x2="{left}" y2="{ty:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 5.0,
            left - 8.0,
            ty + 4.0,
            tick_label(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (left + right) / 2.0,
        bottom + 40.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        let ly = top + 10.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="14" height="3" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            right + 20.0,
            ly - 2.0,
            right + 40.0,
            ly + 3.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Renders `series` and writes the SVG to `path`.
pub fn emit_chart(series: &[ChartSeries], path: &Path) -> Result<()> {
    let svg = render_chart(series, "episode", "evaluation score")?;
    std::fs::write(path, svg)?;
    Ok(())
}
