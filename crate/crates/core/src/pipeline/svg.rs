//! Self-contained SVG figures. Output depends only on the data passed in.

use std::fmt::Write;

use crate::cluster::BoxStats;
use crate::factor::EfaResult;
use crate::scale::Subscale;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn colour(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Round-number tick positions covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let pad = |a: f64, b: f64| if (b - a).abs() < 1e-12 { (a - 1.0, b + 1.0) } else { (a, b) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        esc(title)
    );
}

/// Axes, tick labels and axis titles. `xticks` overrides numeric x ticks
/// with `(position, label)` pairs.
fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str, xticks: Option<&[(f64, String)]>) {
    let (bx, by) = (LEFT, H - BOTTOM);
    let _ = writeln!(
        out,
        r#"<g stroke="black" fill="none"><line x1="{bx}" y1="{by}" x2="{}" y2="{by}"/><line x1="{bx}" y1="{by}" x2="{bx}" y2="{TOP}"/></g>"#,
        W - RIGHT
    );
    let xt: Vec<(f64, String)> = match xticks {
        Some(t) => t.to_vec(),
        None => ticks(f.x0, f.x1, 8).into_iter().map(|v| (v, fmt_tick(v))).collect(),
    };
    for (v, label) in xt {
        let x = f.px(v);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{by}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
            by + 5.0,
            by + 18.0,
            esc(&label)
        );
    }
    for v in ticks(f.y0, f.y1, 6) {
        let y = f.py(v);
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{y:.2}" x2="{bx}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            bx - 5.0,
            bx - 8.0,
            y + 4.0,
            fmt_tick(v)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 14.0,
        esc(xlabel)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (TOP + H - BOTTOM) / 2.0,
        (TOP + H - BOTTOM) / 2.0,
        esc(ylabel)
    );
}

fn legend(out: &mut String, entries: &[(String, &str)]) {
    let x = W - RIGHT - 170.0;
    let _ = writeln!(out, r#"<g class="legend">"#);
    for (i, (label, c)) in entries.iter().enumerate() {
        let y = TOP + 8.0 + 18.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{}" width="12" height="12" fill="{c}"/><text x="{}" y="{}">{}</text>"#,
            y - 10.0,
            x + 18.0,
            y,
            esc(label)
        );
    }
    let _ = writeln!(out, "</g>");
}

/// Observed eigenvalues against the parallel-analysis reference curve.
pub fn scree(efa: &EfaResult) -> String {
    let observed = &efa.observed_eigenvalues;
    let reference = match efa.criterion {
        crate::factor::PaCriterion::Mean => &efa.reference_eigenvalues,
        crate::factor::PaCriterion::P95 => &efa.reference_p95,
    };
    let p = observed.len();
    let ymax = observed.iter().chain(reference).copied().fold(1.0f64, f64::max);
    let f = Frame::new(1.0, p.max(2) as f64, 0.0, ymax * 1.05);
    let mut out = String::new();
    open(&mut out, "Parallel Analysis Scree Plot");
    axes(&mut out, &f, "Factor number", "Eigenvalue", None);
    let line = |vals: &[f64]| -> String {
        vals.iter()
            .enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", f.px(i as f64 + 1.0), f.py(*v)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let ref_label = match efa.criterion {
        crate::factor::PaCriterion::Mean => "Random data (mean)",
        crate::factor::PaCriterion::P95 => "Random data (95th percentile)",
    };
    let _ = writeln!(
        out,
        r#"<polyline class="observed" fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
        colour(0),
        line(observed)
    );
    let _ = writeln!(
        out,
        r#"<polyline class="reference" fill="none" stroke="{}" stroke-width="2" stroke-dasharray="6 4" points="{}"/>"#,
        colour(1),
        line(reference)
    );
    legend(
        &mut out,
        &[("Observed data".to_string(), colour(0)), (ref_label.to_string(), colour(1))],
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="end">retained: {}</text>"#,
        W - RIGHT,
        TOP + 50.0,
        efa.retained_k
    );
    out.push_str("</svg>\n");
    out
}

/// 2-D layout coloured by cluster.
pub fn tsne(points: &[([f64; 2], usize)]) -> String {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for ([x, y], _) in points {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if points.is_empty() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let mx = 0.05 * (x1 - x0);
    let my = 0.05 * (y1 - y0);
    let f = Frame::new(x0 - mx, x1 + mx, y0 - my, y1 + my);
    let mut out = String::new();
    open(&mut out, "t-SNE of Persona Embeddings");
    axes(&mut out, &f, "t-SNE 1", "t-SNE 2", None);
    let k = points.iter().map(|(_, c)| c + 1).max().unwrap_or(0);
    for c in 0..k {
        let _ = writeln!(out, r#"<g class="cluster" fill="{}" fill-opacity="0.75">"#, colour(c));
        for ([x, y], _) in points.iter().filter(|(_, pc)| *pc == c) {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#, f.px(*x), f.py(*y));
        }
        let _ = writeln!(out, "</g>");
    }
    let entries: Vec<(String, &str)> = (0..k).map(|c| (format!("Cluster {c}"), colour(c))).collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}

/// Grouped boxplots: one group per subscale, one box per cluster.
pub fn boxplots(boxes: &[BoxStats]) -> String {
    let k = boxes.iter().map(|b| b.cluster + 1).max().unwrap_or(0);
    let groups = Subscale::ALL.len();
    let f = Frame::new(0.0, groups as f64, 0.5, 7.5);
    let mut out = String::new();
    open(&mut out, "Subscale Scores by Cluster");
    let labels: Vec<(f64, String)> = Subscale::ALL
        .iter()
        .enumerate()
        .map(|(i, s)| (i as f64 + 0.5, s.code().to_string()))
        .collect();
    axes(&mut out, &f, "AMS subscale", "Mean item score", Some(&labels));
    let slot = 0.8 / k.max(1) as f64;
    for b in boxes {
        let g = b.subscale.index() as f64;
        let left = g + 0.1 + slot * b.cluster as f64;
        let (xl, xr) = (f.px(left + 0.1 * slot), f.px(left + 0.9 * slot));
        let xm = (xl + xr) / 2.0;
        let c = colour(b.cluster);
        let _ = writeln!(out, r#"<g class="box" stroke="black">"#);
        let _ = writeln!(
            out,
            r#"<line x1="{xm:.2}" y1="{:.2}" x2="{xm:.2}" y2="{:.2}"/><line x1="{xm:.2}" y1="{:.2}" x2="{xm:.2}" y2="{:.2}"/>"#,
            f.py(b.lo_whisker),
            f.py(b.q1),
            f.py(b.q3),
            f.py(b.hi_whisker)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{xl:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{c}" fill-opacity="0.6"/>"#,
            f.py(b.q3),
            xr - xl,
            (f.py(b.q1) - f.py(b.q3)).max(0.5)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{xl:.2}" y1="{:.2}" x2="{xr:.2}" y2="{:.2}" stroke-width="2"/>"#,
            f.py(b.median),
            f.py(b.median)
        );
        for o in &b.outliers {
            let _ = writeln!(out, r#"<circle cx="{xm:.2}" cy="{:.2}" r="2" fill="none"/>"#, f.py(*o));
        }
        let _ = writeln!(out, "</g>");
    }
    let entries: Vec<(String, &str)> = (0..k).map(|c| (format!("Cluster {c}"), colour(c))).collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    out
}
