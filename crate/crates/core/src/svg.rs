//! Minimal SVG charts for diagnostic output.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const M: f64 = 60.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    /// `(x, y, error)`; error bars are drawn when the error is positive.
    pub points: Vec<(f64, f64, f64)>,
    pub dashed: bool,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Frame {
        let span = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        M + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * M)
    }

    fn py(&self, y: f64) -> f64 {
        H - M - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * M)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        W / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        out,
        "<path d=\"M{M} {} H{} M{M} {} V{M}\" stroke=\"black\" fill=\"none\"/>",
        H - M,
        W - M,
        H - M
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (f.x0 + t * (f.x1 - f.x0), f.y0 + t * (f.y1 - f.y0));
        let _ = writeln!(out, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>", f.px(xv), H - M + 16.0, tick(xv));
        let _ = writeln!(out, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", M - 4.0, f.py(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", W / 2.0, H - 14.0, escape(xlabel));
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

fn legend(out: &mut String, names: &[(&str, &str)]) {
    for (i, (name, color)) in names.iter().enumerate() {
        let y = M + 14.0 * i as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{color}\"/><text x=\"{}\" y=\"{:.1}\">{}</text>",
            W - M - 150.0,
            y,
            W - M - 136.0,
            y + 9.0,
            escape(name)
        );
    }
}

pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.points.iter().flat_map(|p| [p.1 - p.2.max(0.0), p.1 + p.2.max(0.0)]));
    let f = Frame::fit(xs, ys);
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, xlabel, ylabel);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|p| format!("{:.2},{:.2}", f.px(p.0), f.py(p.1)))
            .collect();
        let dash = if s.dashed { " stroke-dasharray=\"5 3\"" } else { "" };
        let _ = writeln!(out, "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\"{dash}/>", pts.join(" "));
        for p in s.points.iter().filter(|p| p.1.is_finite()) {
            let _ = writeln!(out, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>", f.px(p.0), f.py(p.1));
            if p.2 > 0.0 {
                let _ = writeln!(
                    out,
                    "<line x1=\"{0:.2}\" x2=\"{0:.2}\" y1=\"{1:.2}\" y2=\"{2:.2}\" stroke=\"{color}\"/>",
                    f.px(p.0),
                    f.py(p.1 - p.2),
                    f.py(p.1 + p.2)
                );
            }
        }
    }
    let names: Vec<(&str, &str)> = series.iter().enumerate().map(|(i, s)| (s.name.as_str(), COLORS[i % COLORS.len()])).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Clone, Copy)]
pub struct Marker {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub group: usize,
    pub hollow: bool,
}

/// Scatter plot; `line` is `(a, b, c)` for the line `a x + b y + c = 0`.
pub fn scatter(title: &str, markers: &[Marker], line: Option<(f64, f64, f64)>) -> String {
    let f = Frame::fit(markers.iter().map(|m| m.x), markers.iter().map(|m| m.y));
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, "x", "y");
    for m in markers {
        let color = COLORS[m.group % COLORS.len()];
        let fill = if m.hollow { "none" } else { color };
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"{fill}\" fill-opacity=\"0.6\" stroke=\"{color}\"/>",
            f.px(m.x),
            f.py(m.y),
            m.radius
        );
    }
    if let Some((a, b, c)) = line {
        let seg = if b.abs() > 1e-12 {
            Some(((f.x0, -(a * f.x0 + c) / b), (f.x1, -(a * f.x1 + c) / b)))
        } else if a.abs() > 1e-12 {
            Some(((-c / a, f.y0), (-c / a, f.y1)))
        } else {
            None
        };
        if let Some(((x1, y1), (x2, y2))) = seg {
            let _ = writeln!(
                out,
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"black\" stroke-dasharray=\"6 4\"/>",
                f.px(x1),
                f.py(y1),
                f.px(x2),
                f.py(y2)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// 10 x 10 grid with `red` cells, then `yellow` cells, in reading order.
pub fn storage_grid(title: &str, red: usize, yellow: usize) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let cell = 30.0;
    let x0 = (W - 10.0 * cell) / 2.0;
    for k in 0..100 {
        let fill = if k < red {
            "#d62728"
        } else if k < red + yellow {
            "#ffd700"
        } else {
            "#eeeeee"
        };
        let _ = writeln!(
            out,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{}\" height=\"{}\" fill=\"{fill}\" stroke=\"white\"/>",
            x0 + (k % 10) as f64 * cell,
            50.0 + (k / 10) as f64 * cell,
            cell,
            cell
        );
    }
    out.push_str("</svg>\n");
    out
}
