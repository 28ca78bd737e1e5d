//! Minimal standalone SVG box plots.
//!
//! Whiskers span the data range; the plotted values are embedded in a leading comment.

use std::fmt::Write;

use crate::genomics::percentile;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl BoxStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        Some(Self {
            min: percentile(&v, 0.0),
            q1: percentile(&v, 25.0),
            median: percentile(&v, 50.0),
            q3: percentile(&v, 75.0),
            max: percentile(&v, 100.0),
        })
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One box per `(label, values)` series.
pub fn box_plot_svg(title: &str, y_label: &str, series: &[(String, Vec<f64>)]) -> String {
    let (width, height) = (120.0 + 90.0 * series.len().max(1) as f64, 420.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 90.0);
    let stats: Vec<Option<BoxStats>> = series.iter().map(|(_, v)| BoxStats::of(v)).collect();
    let (mut lo, mut hi) = stats
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s.min), b.max(s.max)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let plot_h = height - top - bottom;
    let ypos = |v: f64| top + plot_h * (hi - v) / (hi - lo);

    let mut out = String::new();
    out.push_str("<!--\n");
    for (label, values) in series {
        let joined: Vec<String> = values.iter().map(f64::to_string).collect();
        let _ = writeln!(out, "{},{}", label.replace("--", "- -"), joined.join(","));
    }
    out.push_str("-->\n");
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, escape(title));
    let _ = writeln!(
        out,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
        height - bottom
    );
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = ypos(v);
        let _ = writeln!(out, r#"<line x1="{}" y1="{y:.2}" x2="{left}" y2="{y:.2}" stroke="black"/>"#, left - 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#, left - 6.0, y + 4.0);
    }
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        escape(y_label)
    );
    let slot = (width - left - right) / series.len().max(1) as f64;
    for (i, ((label, _), s)) in series.iter().zip(&stats).enumerate() {
        let cx = left + slot * (i as f64 + 0.5);
        let half = (slot * 0.3).min(30.0);
        if let Some(s) = s {
            let _ = writeln!(
                out,
                r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                ypos(s.max),
                ypos(s.min)
            );
            let _ = writeln!(
                out,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#9ecae1" stroke="black"/>"##,
                cx - half,
                ypos(s.q3),
                2.0 * half,
                (ypos(s.q1) - ypos(s.q3)).max(0.5)
            );
            for v in [s.min, s.max] {
                let _ = writeln!(
                    out,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
                    cx - half / 2.0,
                    ypos(v),
                    cx + half / 2.0,
                    ypos(v)
                );
            }
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
                cx - half,
                ypos(s.median),
                cx + half,
                ypos(s.median)
            );
        }
        let ly = height - bottom + 14.0;
        let _ = writeln!(
            out,
            r#"<text x="{cx:.2}" y="{ly:.2}" text-anchor="end" transform="rotate(-35 {cx:.2} {ly:.2})">{}</text>"#,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}
