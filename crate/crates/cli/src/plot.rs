//! Minimal SVG line charts with optional error bands.

use std::fmt::Write;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 320.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 46.0;

#[derive(Clone, Debug, Default)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// `(x, low, high)` band, drawn in x order.
    pub band: Vec<(f64, f64, f64)>,
    pub line: bool,
    pub markers: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

impl Chart {
    fn x_range(&self) -> (f64, f64) {
        extent(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0).chain(s.band.iter().map(|b| b.0))))
    }

    fn y_range(&self) -> (f64, f64) {
        extent(self.series.iter().flat_map(|s| {
            s.points.iter().map(|p| p.1).chain(s.band.iter().flat_map(|b| [b.1, b.2]))
        }))
    }

    fn render(&self, out: &mut String, ox: f64) {
        let (x0, x1) = self.x_range();
        let (y0, y1) = self.y_range();
        let (pw, ph) = (PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B);
        let sx = |x: f64| ox + MARGIN_L + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN_T + ph - (y - y0) / (y1 - y0) * ph;

        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#444"/>"##,
            ox + MARGIN_L,
            MARGIN_T
        );
        for i in 0..=4 {
            let t = i as f64 / 4.0;
            let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            let _ = writeln!(
                out,
                r##"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"##,
                sx(xv),
                MARGIN_T + ph + 14.0,
                tick(xv)
            );
            let _ = writeln!(
                out,
                r##"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"##,
                ox + MARGIN_L - 4.0,
                sy(yv) + 3.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="18" font-size="13" text-anchor="middle">{}</text>"##,
            ox + MARGIN_L + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"##,
            ox + MARGIN_L + pw / 2.0,
            PANEL_H - 10.0,
            escape(&self.x_label)
        );
        let (lx, ly) = (ox + 14.0, MARGIN_T + ph / 2.0);
        let _ = writeln!(
            out,
            r##"<text x="{lx:.2}" y="{ly:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 {lx:.2} {ly:.2})">{}</text>"##,
            escape(&self.y_label)
        );

        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            if !s.band.is_empty() {
                let mut band = s.band.clone();
                band.sort_by(|a, b| a.0.total_cmp(&b.0));
                let upper = band.iter().map(|b| format!("{:.2},{:.2}", sx(b.0), sy(b.2)));
                let lower = band.iter().rev().map(|b| format!("{:.2},{:.2}", sx(b.0), sy(b.1)));
                let pts: Vec<String> = upper.chain(lower).collect();
                let _ = writeln!(
                    out,
                    r##"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"##,
                    pts.join(" ")
                );
            }
            if s.line && s.points.len() > 1 {
                let pts: Vec<String> = s.points.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
                let _ = writeln!(
                    out,
                    r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"##,
                    pts.join(" ")
                );
            }
            if s.markers {
                for p in &s.points {
                    let _ = writeln!(out, r##"<circle cx="{:.2}" cy="{:.2}" r="2.6" fill="{color}"/>"##, sx(p.0), sy(p.1));
                }
            }
            let ly = MARGIN_T + 12.0 + 14.0 * i as f64;
            let lx = ox + MARGIN_L + 8.0;
            let _ = writeln!(out, r##"<rect x="{lx:.2}" y="{:.2}" width="10" height="10" fill="{color}"/>"##, ly - 9.0);
            let _ = writeln!(
                out,
                r##"<text x="{:.2}" y="{ly:.2}" font-size="10">{}</text>"##,
                lx + 14.0,
                escape(&s.label)
            );
        }
    }
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

/// Renders charts side by side in one SVG document.
pub fn render(charts: &[Chart]) -> String {
    let width = PANEL_W * charts.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{PANEL_H:.0}" viewBox="0 0 {width:.0} {PANEL_H:.0}" font-family="sans-serif">"##
    );
    let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="white"/>"##);
    for (i, c) in charts.iter().enumerate() {
        c.render(&mut out, i as f64 * PANEL_W);
    }
    out.push_str("</svg>\n");
    out
}
