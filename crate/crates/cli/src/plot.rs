//! Minimal static SVG line charts. Outputs only; nothing reads them back.

use std::fmt::Write as _;

const W: f64 = 720.0;
const H: f64 = 440.0;
const PAD_L: f64 = 70.0;
const PAD_R: f64 = 20.0;
const PAD_T: f64 = 40.0;
const PAD_B: f64 = 50.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Series<'a> {
    pub label: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

/// Interval from the first abscissa to where the trapezoidal integral of
/// `y` reaches `fraction` of its total; keeps long tails from flattening
/// the interesting part of a density plot.
pub fn bulk_range(x: &[f64], y: &[f64], fraction: f64) -> Option<(f64, f64)> {
    if x.len() < 2 {
        return None;
    }
    let mut cum = vec![0.0; x.len()];
    for i in 1..x.len() {
        let step = 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1]);
        cum[i] = cum[i - 1] + if step.is_finite() { step } else { 0.0 };
    }
    let total = cum[x.len() - 1];
    if !(total > 0.0) {
        return None;
    }
    let i = cum.iter().position(|&c| c >= fraction * total)?;
    (x[i] > x[0]).then(|| (x[0], x[i]))
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

/// Line chart of one or more series sharing axes. `x_range` clips the
/// horizontal axis when given.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], x_range: Option<(f64, f64)>) -> String {
    let (x0, x1) = x_range.unwrap_or_else(|| finite_range(series.iter().flat_map(|s| s.x.iter().copied())));
    let (_, y1) = finite_range(series.iter().flat_map(|s| {
        s.x.iter()
            .zip(s.y.iter())
            .filter(move |(x, _)| **x >= x0 && **x <= x1)
            .map(|(_, y)| *y)
    }));
    let y0 = 0.0f64.min(finite_range(series.iter().flat_map(|s| s.y.iter().copied())).0);
    let y1 = if y1 > y0 { y1 * 1.05 } else { y0 + 1.0 };
    let px = |x: f64| PAD_L + (x - x0) / (x1 - x0) * (W - PAD_L - PAD_R);
    let py = |y: f64| H - PAD_B - (y - y0) / (y1 - y0) * (H - PAD_T - PAD_B);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{l},{t} L{l},{b} L{r},{b}" fill="none" stroke="black"/>"#,
        l = PAD_L,
        t = PAD_T,
        b = H - PAD_B,
        r = W - PAD_R
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, px(xv), H - PAD_B + 18.0, tick(xv));
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, PAD_L - 6.0, py(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (PAD_L + W - PAD_R) / 2.0, H - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">{}</text>"#,
        escape(y_label),
        y = (PAD_T + H - PAD_B) / 2.0
    );
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut d = String::new();
        let mut pen = false;
        for (&x, &y) in ser.x.iter().zip(ser.y) {
            if !(x.is_finite() && y.is_finite()) || x < x0 || x > x1 {
                pen = false;
                continue;
            }
            let _ = write!(d, "{}{:.2},{:.2} ", if pen { "L" } else { "M" }, px(x), py(y));
            pen = true;
        }
        let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, d.trim_end());
        let ly = PAD_T + 16.0 * k as f64 + 8.0;
        let _ = writeln!(
            s,
            r#"<line x1="{a}" y1="{ly}" x2="{b}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{c}" y="{ty}">{}</text>"#,
            escape(ser.label),
            a = W - PAD_R - 150.0,
            b = W - PAD_R - 126.0,
            c = W - PAD_R - 120.0,
            ty = ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
