//! Minimal scatter SVGs: one `<circle>` per point, no timestamps.

use std::fmt::Write as _;

pub struct Point {
    pub x: f64,
    pub y: f64,
    pub class: &'static str,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Permuted adjacency matrix in rank coordinates: the point for edge `u -> v`
/// sits at `cx = rank(v)`, `cy = rank(u)`, so the viewBox is `0 0 n+1 n+1`.
pub fn matrix(title: &str, n: usize, points: &[(usize, usize)]) -> String {
    let side = n + 1;
    let r = 0.5f64.min(0.002 * side as f64).max(0.15);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="600" height="600" viewBox="0 0 {side} {side}">"#
    );
    let _ = writeln!(s, "<title>{}</title>", esc(title));
    let _ = writeln!(
        s,
        r#"<rect x="0.5" y="0.5" width="{n}" height="{n}" fill="white" stroke="black" stroke-width="{:.3}"/>"#,
        r / 2.0
    );
    let _ = writeln!(s, r#"<g fill="black">"#);
    for &(row, col) in points {
        let _ = writeln!(s, r#"<circle cx="{col}" cy="{row}" r="{r:.3}"/>"#);
    }
    s.push_str("</g>\n</svg>\n");
    s
}

/// Scatter in data coordinates mapped to a 600x400 plot area.
pub fn scatter(title: &str, x_label: &str, y_label: &str, points: &[Point]) -> String {
    const W: f64 = 600.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    let bounds = |f: fn(&Point) -> f64| {
        let (lo, hi) = points
            .iter()
            .map(f)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                (a.min(v), b.max(v))
            });
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = bounds(|p| p.x);
    let (y0, y1) = bounds(|p| p.y);
    let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, "<title>{}</title>", esc(title));
    let _ = writeln!(
        s,
        "<style>.liberal{{fill:#2166ac}}.conservative{{fill:#b2182b}}.mainstream{{fill:#4d4d4d}}.pruned{{fill:#bababa}}</style>"
    );
    let _ = writeln!(
        s,
        r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * M,
        H - 2.0 * M
    );
    if y0 < 0.0 && y1 > 0.0 {
        let z = py(0.0);
        let _ = writeln!(
            s,
            r##"<line x1="{M}" y1="{z:.2}" x2="{}" y2="{z:.2}" stroke="#999" stroke-dasharray="4 4"/>"##,
            W - M
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{} [{x0:.3}, {x1:.3}]</text>"#,
        W / 2.0,
        H - 15.0,
        esc(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 15 {})">{} [{y0:.3}, {y1:.3}]</text>"#,
        H / 2.0,
        H / 2.0,
        esc(y_label)
    );
    let _ = writeln!(s, "<g>");
    for p in points {
        let _ = writeln!(
            s,
            r#"<circle class="{}" cx="{:.2}" cy="{:.2}" r="3"/>"#,
            p.class,
            px(p.x),
            py(p.y)
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}
