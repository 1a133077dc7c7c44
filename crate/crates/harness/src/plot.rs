use std::fmt::Write as _;
use std::path::Path;

use modmf_core::metrics::RateFit;

use crate::error::{HarnessError, Result};
use crate::output;

const W: f64 = 640.0;
const H: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

/// Log-log scatter of `fit` with its regression line and slope annotation.
/// Byte-identical for identical input.
pub fn rate_plot_svg(fit: &RateFit) -> Result<String> {
    if fit.n_values.len() < 2 || fit.n_values.len() != fit.errors.len() {
        return Err(HarnessError::validation("a rate plot needs at least 2 points"));
    }
    if fit.n_values.contains(&0) || fit.errors.iter().any(|e| !(e.mean > 0.0) || !e.mean.is_finite()) {
        return Err(HarnessError::validation("rate plot values must be positive"));
    }
    let xs: Vec<f64> = fit.n_values.iter().map(|&n| (n as f64).log10()).collect();
    let ys: Vec<f64> = fit.errors.iter().map(|e| e.mean.log10()).collect();
    let lo_err: Vec<f64> = fit.errors.iter().map(|e| (e.mean - e.se).max(e.mean * 1e-3).log10()).collect();
    let hi_err: Vec<f64> = fit.errors.iter().map(|e| (e.mean + e.se).log10()).collect();
    let (x0, x1) = decades(xs.iter().copied());
    let (y0, y1) = decades(ys.iter().chain(&lo_err).chain(&hi_err).copied());
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * (W - LEFT - RIGHT);
    let py = |y: f64| H - BOTTOM - (y - y0) / (y1 - y0) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{:.3}" height="{:.3}" fill="none" stroke="black"/>"#,
        W - LEFT - RIGHT,
        H - TOP - BOTTOM
    );
    for d in (x0 as i32)..=(x1 as i32) {
        let x = px(d as f64);
        let _ = writeln!(s, r##"<line x1="{x:.3}" y1="{TOP}" x2="{x:.3}" y2="{:.3}" stroke="#ddd"/>"##, H - BOTTOM);
        let _ = writeln!(
            s,
            r#"<text x="{x:.3}" y="{:.3}" text-anchor="middle" font-size="12">1e{d}</text>"#,
            H - BOTTOM + 18.0
        );
    }
    for d in (y0 as i32)..=(y1 as i32) {
        let y = py(d as f64);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.3}" x2="{:.3}" y2="{y:.3}" stroke="#ddd"/>"##, W - RIGHT);
        let _ = writeln!(
            s,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="end" font-size="12">1e{d}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.3}" y="{:.3}" text-anchor="middle" font-size="14">n</text>"#,
        LEFT + (W - LEFT - RIGHT) / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.3}" text-anchor="middle" font-size="14" transform="rotate(-90 20 {:.3})">error</text>"#,
        TOP + (H - TOP - BOTTOM) / 2.0,
        TOP + (H - TOP - BOTTOM) / 2.0
    );
    let (a, b) = (xs[0], xs[xs.len() - 1]);
    let line = |x: f64| (fit.intercept + fit.slope * x * std::f64::consts::LN_10) / std::f64::consts::LN_10;
    let _ = writeln!(
        s,
        r##"<line id="fit" x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="#c03" stroke-width="2"/>"##,
        px(a),
        py(line(a)),
        px(b),
        py(line(b))
    );
    for i in 0..xs.len() {
        let x = px(xs[i]);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.3}" y1="{:.3}" x2="{x:.3}" y2="{:.3}" stroke="black"/>"#,
            py(lo_err[i]),
            py(hi_err[i])
        );
        let _ = writeln!(s, r#"<circle cx="{x:.3}" cy="{:.3}" r="4" fill="black"/>"#, py(ys[i]));
    }
    let _ = writeln!(
        s,
        r#"<text id="slope" x="{:.3}" y="{:.3}" font-size="14">slope = {:.3} ± {:.3}</text>"#,
        LEFT + 12.0,
        TOP + 20.0,
        fit.slope,
        fit.slope_se
    );
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes [`rate_plot_svg`] to `path`.
pub fn emit_rate_plot(fit: &RateFit, path: &Path) -> Result<()> {
    output::write_file(path, rate_plot_svg(fit)?.as_bytes())
}

/// Reads the annotated slope back from a plot.
pub fn annotated_slope(svg: &str) -> Option<f64> {
    let start = svg.find(r#"id="slope""#)?;
    let rest = &svg[start..];
    let from = rest.find("slope = ")? + "slope = ".len();
    rest[from..].split_whitespace().next()?.parse().ok()
}

fn decades(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    let (lo, hi) = (lo.floor(), hi.ceil());
    if hi > lo {
        (lo, hi)
    } else {
        (lo, lo + 1.0)
    }
}
