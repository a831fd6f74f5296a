//! Minimal SVG output: log-log scatter of the gap estimates with the fitted
//! rate line of each scenario.

use std::fmt::Write;

use super::experiment::SweepReport;

const W: f64 = 640.0;
const H: f64 = 440.0;
const MARGIN: f64 = 64.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// XML comments may not contain `--`.
fn comment_safe(s: &str) -> String {
    s.replace("--", "-\u{2010}")
}

pub fn rate_svg(report: &SweepReport) -> String {
    let mut pts: Vec<(usize, f64, f64)> = Vec::new();
    for (k, fit) in report.fits.iter().enumerate() {
        for c in report.cells_of(&fit.label) {
            if let Some(g) = &c.gap {
                if g.mean > 0.0 {
                    pts.push((k, (c.plan.axis_size() as f64).log10(), g.mean.log10()));
                }
            }
        }
    }
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(svg, "<!-- config: {} -->", comment_safe(&report.config.to_json()));
    let _ = writeln!(svg, "<!-- seed: {} -->", report.seed);
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    if pts.is_empty() {
        let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="14">no positive estimates</text>"#, W / 2.0 - 70.0, H / 2.0);
        svg.push_str("</svg>\n");
        return svg;
    }
    let lo = |f: fn(&(usize, f64, f64)) -> f64| pts.iter().map(f).fold(f64::INFINITY, f64::min);
    let hi = |f: fn(&(usize, f64, f64)) -> f64| pts.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let (x0, x1) = ((lo(|p| p.1) - 0.1).floor_to(0.5), (hi(|p| p.1) + 0.1).ceil_to(0.5));
    let (y0, y1) = ((lo(|p| p.2) - 0.1).floor_to(0.5), (hi(|p| p.2) + 0.1).ceil_to(0.5));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let _ = writeln!(
        svg,
        r#"<g stroke="black" fill="none"><rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}"/></g>"#,
        W - 2.0 * MARGIN,
        H - 2.0 * MARGIN
    );
    let mut t = (x0 * 2.0).ceil() / 2.0;
    while t <= x1 + 1e-9 {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
            sx(t),
            H - MARGIN + 16.0,
            fmt_tick(t)
        );
        t += 0.5;
    }
    let mut t = (y0 * 2.0).ceil() / 2.0;
    while t <= y1 + 1e-9 {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"#,
            MARGIN - 6.0,
            sy(t) + 4.0,
            fmt_tick(t)
        );
        t += 0.5;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">sample size (log scale)</text>"#,
        W / 2.0,
        H - 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.1})">generalization gap</text>"#,
        H / 2.0,
        H / 2.0
    );

    for (k, fit) in report.fits.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        for p in pts.iter().filter(|p| p.0 == k) {
            let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{color}"/>"#, sx(p.1), sy(p.2));
        }
        let mut legend = format!("{} vs {}", fit.label, fit.axis);
        if let Some(f) = &fit.fit {
            let ln10 = std::f64::consts::LN_10;
            let xs: Vec<f64> = f.points.iter().map(|p| p.n.log10()).collect();
            let (a, b) = (xs.iter().cloned().fold(f64::INFINITY, f64::min), xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
            let y = |x: f64| (f.intercept + f.slope * x * ln10) / ln10;
            let _ = writeln!(
                svg,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="1.5"/>"#,
                sx(a),
                sy(y(a)),
                sx(b),
                sy(y(b))
            );
            let _ = write!(legend, ", slope {:.2}", f.slope);
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" fill="{color}">{}</text>"#,
            MARGIN + 10.0,
            MARGIN + 18.0 + 16.0 * k as f64,
            escape(&legend)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn fmt_tick(log10: f64) -> String {
    let v = 10f64.powf(log10);
    if (1e-2..1e4).contains(&v) {
        format!("{}", (v * 100.0).round() / 100.0)
    } else {
        format!("{v:.0e}")
    }
}

trait Snap {
    fn floor_to(self, step: f64) -> f64;
    fn ceil_to(self, step: f64) -> f64;
}

impl Snap for f64 {
    fn floor_to(self, step: f64) -> f64 {
        (self / step).floor() * step
    }
    fn ceil_to(self, step: f64) -> f64 {
        (self / step).ceil() * step
    }
}
