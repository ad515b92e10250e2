//! Static log-log scatter plots.

use std::fmt::Write as _;

use super::Series;

const W: f64 = 480.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// log2 R against log2 value, with the line of slope `target` through the
/// fitted constant.
pub fn scaling_plot(s: &Series) -> String {
    let pts: Vec<(f64, f64)> =
        s.points.iter().filter(|(r, v)| *r > 0.0 && *v > 0.0).map(|(r, v)| (r.log2(), v.log2())).collect();
    let line = |x: f64| s.constant.log2() + s.target * x;
    let (mut x0, mut x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    if !x0.is_finite() {
        let rs: Vec<f64> = s.points.iter().filter(|p| p.0 > 0.0).map(|p| p.0.log2()).collect();
        x0 = rs.iter().copied().fold(0.0, f64::min);
        x1 = rs.iter().copied().fold(1.0, f64::max);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let mut ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    if s.constant > 0.0 {
        ys.extend([line(x0), line(x1)]);
    }
    let mut y0 = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let mut y1 = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    if y1 - y0 < 1e-9 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" font-size="12" text-anchor="middle">{} ({})</text>"#,
        W / 2.0,
        escape(&s.label),
        s.verdict
    );
    let _ =
        writeln!(out, r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">log2 R</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" font-size="11" text-anchor="middle" transform="rotate(-90 14 {})">log2 value</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (v, anchor, x, y) in [(x0, "start", px(x0), H - PAD + 14.0), (x1, "end", px(x1), H - PAD + 14.0)] {
        let _ = writeln!(out, r#"<text x="{x:.1}" y="{y:.1}" font-size="10" text-anchor="{anchor}">{v:.2}</text>"#);
    }
    for (v, y) in [(y0, py(y0)), (y1, py(y1) + 10.0)] {
        let _ =
            writeln!(out, r#"<text x="{:.1}" y="{y:.1}" font-size="10" text-anchor="end">{v:.2}</text>"#, PAD - 4.0);
    }
    if s.constant > 0.0 {
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
            px(x0),
            py(line(x0)),
            px(x1),
            py(line(x1))
        );
    }
    for (x, y) in &pts {
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, px(*x), py(*y));
    }
    out.push_str("</svg>\n");
    out
}
