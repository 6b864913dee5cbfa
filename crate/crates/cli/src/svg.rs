//! Small static SVG charts. Output depends only on the data.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// `(x, lower, upper)` shaded behind the line.
    pub band: Option<Vec<(f64, f64, f64)>>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let span = |v: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                (lo, hi)
            }
        };
        let (x0, x1) = span(&mut xs.clone());
        let (y0, y1) = span(&mut ys.clone());
        let pad = 0.05 * (y1 - y0);
        Self {
            x0,
            x1,
            y0: y0 - pad,
            y1: y1 + pad,
        }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v.fract() == 0.0 && v.abs() < 1e6) {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn header(out: &mut String, comment: &str, title: &str, f: &Frame, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, "<!-- {} -->", escape(comment));
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let (bx, by) = (H - BOTTOM, W - RIGHT);
    let _ = writeln!(out, r#"<line x1="{LEFT}" y1="{bx}" x2="{by}" y2="{bx}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{bx}" stroke="black"/>"#);
    for i in 0..=4 {
        let a = i as f64 / 4.0;
        let xv = f.x0 + a * (f.x1 - f.x0);
        let yv = f.y0 + a * (f.y1 - f.y0);
        let (x, y) = (f.px(xv), f.py(yv));
        let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{bx}" x2="{x:.2}" y2="{}" stroke="black"/>"#, bx + 4.0);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, bx + 16.0, tick(xv));
        let _ = writeln!(out, r#"<line x1="{}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, y + 4.0, tick(yv));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (LEFT + W - RIGHT) / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (TOP + H - BOTTOM) / 2.0,
        escape(y_label)
    );
}

pub fn line_chart(comment: &str, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| {
        s.points
            .iter()
            .map(|p| p.1)
            .chain(s.band.iter().flatten().flat_map(|b| [b.1, b.2]))
    });
    let f = Frame::new(xs, ys);
    let mut out = String::new();
    header(&mut out, comment, title, &f, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if let Some(band) = &s.band {
            if !band.is_empty() {
                let mut pts: Vec<String> = band.iter().map(|b| format!("{:.2},{:.2}", f.px(b.0), f.py(b.2))).collect();
                pts.extend(band.iter().rev().map(|b| format!("{:.2},{:.2}", f.px(b.0), f.py(b.1))));
                let _ = writeln!(out, r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#, pts.join(" "));
            }
        }
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|p| format!("{:.2},{:.2}", f.px(p.0), f.py(p.1)))
            .collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" "));
        let ly = TOP + 14.0 * i as f64;
        let _ = writeln!(out, r#"<rect x="{}" y="{ly}" width="10" height="10" fill="{color}"/>"#, W - RIGHT - 150.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, W - RIGHT - 135.0, ly + 9.0, escape(&s.name));
    }
    out.push_str("</svg>\n");
    out
}

/// Bars given as `(left edge, width, height)`.
pub fn bar_chart(comment: &str, title: &str, x_label: &str, y_label: &str, bars: &[(f64, f64, f64)]) -> String {
    let xs = bars.iter().flat_map(|b| [b.0, b.0 + b.1]);
    let ys = bars.iter().map(|b| b.2).chain(std::iter::once(0.0));
    let f = Frame::new(xs, ys);
    let mut out = String::new();
    header(&mut out, comment, title, &f, x_label, y_label);
    for b in bars {
        let (x0, x1) = (f.px(b.0), f.px(b.0 + b.1));
        let (ytop, ybase) = (f.py(b.2), f.py(0.0));
        let _ = writeln!(
            out,
            r#"<rect x="{x0:.2}" y="{ytop:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
            (x1 - x0).max(0.5),
            (ybase - ytop).max(0.0),
            PALETTE[0]
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_deterministic_and_closed() {
        let s = vec![Series {
            name: "a<b".into(),
            points: vec![(2000.0, 0.5), (2001.0, 0.4), (2002.0, 0.3)],
            band: Some(vec![(2000.0, 0.4, 0.6), (2002.0, 0.2, 0.4)]),
        }];
        let a = line_chart("seed=1", "t", "x", "y", &s);
        assert_eq!(a, line_chart("seed=1", "t", "x", "y", &s));
        assert!(a.ends_with("</svg>\n"));
        assert!(a.contains("a&lt;b"));
        let b = bar_chart("seed=1", "h", "x", "n", &[(0.0, 0.1, 3.0), (0.1, 0.1, 5.0)]);
        assert_eq!(b.matches("<rect").count(), 3);
    }

    #[test]
    fn flat_data_does_not_divide_by_zero() {
        let s = vec![Series {
            name: "flat".into(),
            points: vec![(1.0, 2.0), (1.0, 2.0)],
            band: None,
        }];
        assert!(!line_chart("", "", "", "", &s).contains("NaN"));
    }
}
