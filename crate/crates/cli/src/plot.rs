//! Tiny deterministic SVG plots: line charts, scatters, and histogram
//! step plots. No external plotting dependency; output is a static
//! vector file.

use std::fmt::Write as _;
use std::path::Path;

const W: f64 = 640.0;
const H: f64 = 420.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if !xmin.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if (xmax - xmin).abs() < 1e-12 {
        xmax = xmin + 1.0;
    }
    if (ymax - ymin).abs() < 1e-12 {
        ymax = ymin + 1.0;
    }
    (xmin, xmax, ymin, ymax)
}

fn svg_header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        xml_escape(title)
    )
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(xmin: f64, xmax: f64, ymin: f64, ymax: f64, x_label: &str, y_label: &str) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN / 2.0,
        t = MARGIN / 2.0
    );
    let _ = write!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        H - 12.0,
        xml_escape(x_label)
    );
    let _ = write!(
        out,
        "<text x=\"16\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>\n",
        H / 2.0,
        H / 2.0,
        xml_escape(y_label)
    );
    for (v, x_axis) in [(xmin, true), (xmax, true), (ymin, false), (ymax, false)] {
        if x_axis {
            let px = if v == xmin { MARGIN } else { W - MARGIN / 2.0 };
            let _ = write!(
                out,
                "<text x=\"{px}\" y=\"{}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"middle\">{v:.3}</text>\n",
                H - MARGIN + 16.0
            );
        } else {
            let py = if v == ymin { H - MARGIN } else { MARGIN / 2.0 };
            let _ = write!(
                out,
                "<text x=\"{}\" y=\"{py}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"end\">{v:.3}</text>\n",
                MARGIN - 6.0
            );
        }
    }
    out
}

fn to_px(x: f64, y: f64, b: (f64, f64, f64, f64)) -> (f64, f64) {
    let (xmin, xmax, ymin, ymax) = b;
    let px = MARGIN + (x - xmin) / (xmax - xmin) * (W - 1.5 * MARGIN);
    let py = (H - MARGIN) - (y - ymin) / (ymax - ymin) * (H - 1.5 * MARGIN);
    (px, py)
}

fn legend(series: &[Series]) -> String {
    let mut out = String::new();
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let y = MARGIN / 2.0 + 14.0 * i as f64;
        let _ = write!(
            out,
            "<rect x=\"{}\" y=\"{}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\
             <text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">{}</text>\n",
            W - 180.0,
            y - 9.0,
            W - 165.0,
            y,
            xml_escape(&s.label)
        );
    }
    out
}

pub fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> std::io::Result<()> {
    let b = bounds(series);
    let mut svg = svg_header(title);
    svg.push_str(&axes(b.0, b.1, b.2, b.3, x_label, y_label));
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| {
                let (px, py) = to_px(x, y, b);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        let _ = write!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.6\"/>\n",
            pts.join(" ")
        );
    }
    svg.push_str(&legend(series));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)
}

pub fn scatter(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> std::io::Result<()> {
    let b = bounds(series);
    let mut svg = svg_header(title);
    svg.push_str(&axes(b.0, b.1, b.2, b.3, x_label, y_label));
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        for &(x, y) in &s.points {
            let (px, py) = to_px(x, y, b);
            let _ = write!(
                svg,
                "<circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"2.2\" fill=\"{color}\" fill-opacity=\"0.65\"/>\n"
            );
        }
    }
    svg.push_str(&legend(series));
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)
}

/// Histogram step plot: one step line per group over shared unit-range
/// bins.
pub fn histogram(path: &Path, title: &str, groups: &[(String, Vec<usize>)]) -> std::io::Result<()> {
    let series: Vec<Series> = groups
        .iter()
        .map(|(label, counts)| {
            let n = counts.len().max(1);
            let mut points = Vec::with_capacity(2 * n);
            for (i, &c) in counts.iter().enumerate() {
                points.push((i as f64 / n as f64, c as f64));
                points.push(((i + 1) as f64 / n as f64, c as f64));
            }
            Series { label: label.clone(), points }
        })
        .collect();
    line_chart(path, title, "confidence", "count", &series)
}
