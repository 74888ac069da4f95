//! Minimal static SVG charts.

use std::fmt::Write as _;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub struct Series<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub values: Vec<f64>,
}

/// Grouped vertical bars, one group per category, one bar per series.
pub fn grouped_bars(title: &str, categories: &[String], series: &[Series], y_label: &str) -> String {
    let (left, right, top, bottom) = (70.0, 20.0, 50.0, 60.0);
    let bar = 14.0;
    let group = bar * series.len() as f64 + 18.0;
    let width = left + right + group * categories.len() as f64;
    let height = 340.0;
    let plot_h = height - top - bottom;

    let all = series.iter().flat_map(|s| s.values.iter().copied());
    let (lo, hi) = all.fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = if hi - lo > 0.0 { hi - lo } else { 1.0 };
    let (lo, hi) = (lo - 0.05 * span, hi + 0.05 * span);
    let y = |v: f64| top + plot_h * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="20" font-size="14" text-anchor="middle">{}</text>"#, width / 2.0, escape(title));
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{:.1}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"##,
            width - right,
            left - 6.0,
            y(v) + 4.0,
            y = y(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{left}" x2="{:.1}" y1="{z:.1}" y2="{z:.1}" stroke="black"/>"#,
        width - right,
        z = y(0.0)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        top + plot_h / 2.0,
        escape(y_label)
    );
    for (c, cat) in categories.iter().enumerate() {
        let x0 = left + group * c as f64 + 9.0;
        for (k, ser) in series.iter().enumerate() {
            let v = ser.values.get(c).copied().unwrap_or(0.0);
            let (a, b) = (y(v), y(0.0));
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{} {}: {v:.4}</title></rect>"#,
                x0 + bar * k as f64,
                a.min(b),
                bar - 2.0,
                (a - b).abs(),
                ser.color,
                escape(ser.name),
                escape(cat)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + bar * series.len() as f64 / 2.0,
            height - bottom + 18.0,
            escape(cat)
        );
    }
    for (k, ser) in series.iter().enumerate() {
        let ly = height - 18.0;
        let lx = left + 120.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{ly:.1}">{}</text>"#,
            ly - 9.0,
            ser.color,
            lx + 14.0,
            escape(ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// An arrow in world coordinates (mm).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arrow {
    pub x: f64,
    pub y: f64,
    pub dx: f64,
    pub dy: f64,
}

/// Arrow plot over the world rectangle `[x0, x1] × [y0, y1]`; arrows are
/// drawn `scale` times their length, y pointing up.
pub fn quiver(title: &str, arrows: &[Arrow], bounds: [f64; 4], scale: f64) -> String {
    let [x0, x1, y0, y1] = bounds;
    let size = 480.0;
    let margin = 30.0;
    let k = size / (x1 - x0).max(y1 - y0);
    let px = |x: f64| margin + (x - x0) * k;
    let py = |y: f64| margin + (y1 - y) * k;
    let w = 2.0 * margin + (x1 - x0) * k;
    let h = 2.0 * margin + (y1 - y0) * k;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}" font-family="sans-serif" font-size="12">"#
    );
    s.push_str(
        r##"<defs><marker id="head" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="5" markerHeight="5" orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="#1f4e9c"/></marker></defs>"##,
    );
    s.push('\n');
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r##"<rect x="{margin}" y="{margin}" width="{:.1}" height="{:.1}" fill="none" stroke="#999"/>"##,
        (x1 - x0) * k,
        (y1 - y0) * k
    );
    let _ = writeln!(s, r#"<text x="{:.1}" y="20" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    for a in arrows {
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#1f4e9c" stroke-width="1.2" marker-end="url(#head)"/>"##,
            px(a.x),
            py(a.y),
            px(a.x + scale * a.dx),
            py(a.y + scale * a.dy)
        );
    }
    s.push_str("</svg>\n");
    s
}
