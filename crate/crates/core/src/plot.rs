//! Minimal static SVG figures: bar charts and a line chart.

use std::fmt::Write;

use crate::hetero::{ExplainedVariance, Histogram};

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = write!(
        s,
        r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#,
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD
    );
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn y_axis(s: &mut String, lo: f64, hi: f64) {
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        let y = H - PAD - (H - 2.0 * PAD) * t as f64 / 4.0;
        let _ = write!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            PAD - 6.0,
            y + 4.0,
            format_tick(v)
        );
    }
}

fn format_tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1e4) {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Vertical bars with optional error whiskers; values may be negative.
pub fn bar_chart_svg(title: &str, labels: &[String], values: &[f64], errors: Option<&[f64]>) -> String {
    let mut s = header(title);
    let err = |i: usize| errors.map_or(0.0, |e| e[i]);
    let lo = values
        .iter()
        .enumerate()
        .map(|(i, v)| v - err(i))
        .fold(0.0f64, f64::min);
    let hi = values
        .iter()
        .enumerate()
        .map(|(i, v)| v + err(i))
        .fold(0.0f64, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let to_y = |v: f64| H - PAD - (v - lo) / span * (H - 2.0 * PAD);
    y_axis(&mut s, lo, lo + span);
    let slot = (W - 2.0 * PAD) / values.len().max(1) as f64;
    for (i, &v) in values.iter().enumerate() {
        let x = PAD + slot * (i as f64 + 0.15);
        let (y0, y1) = (to_y(0.0), to_y(v));
        let _ = write!(
            s,
            r##"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4c78a8"/>"##,
            y0.min(y1),
            slot * 0.7,
            (y0 - y1).abs()
        );
        if errors.is_some() {
            let cx = x + slot * 0.35;
            let _ = write!(
                s,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                to_y(v - err(i)),
                to_y(v + err(i))
            );
        }
        if let Some(label) = labels.get(i) {
            let _ = write!(
                s,
                r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
                x + slot * 0.35,
                H - PAD + 16.0,
                escape(label)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn histogram_svg(hist: &Histogram, xlabel: &str) -> String {
    let labels: Vec<String> = hist
        .edges
        .windows(2)
        .enumerate()
        .map(|(i, w)| if i % 4 == 0 { format_tick(0.5 * (w[0] + w[1])) } else { String::new() })
        .collect();
    let counts: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    bar_chart_svg(&format!("Distribution of {xlabel}"), &labels, &counts, None)
}

/// Cumulative explained variance against component count.
pub fn explained_variance_svg(curve: &[ExplainedVariance]) -> String {
    let mut s = header("Cumulative explained variance");
    y_axis(&mut s, 0.0, 1.0);
    let n = curve.len().max(1) as f64;
    let pts: Vec<String> = curve
        .iter()
        .map(|r| {
            let x = PAD + (W - 2.0 * PAD) * r.component as f64 / n;
            let y = H - PAD - (H - 2.0 * PAD) * r.cumulative.clamp(0.0, 1.0);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = write!(
        s,
        r##"<polyline points="{}" fill="none" stroke="#e45756" stroke-width="2"/>"##,
        pts.join(" ")
    );
    let _ = write!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">principal components (1..{})</text>"#,
        W / 2.0,
        H - 16.0,
        curve.len()
    );
    s.push_str("</svg>\n");
    s
}
