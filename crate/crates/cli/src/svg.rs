//! Static scatter plots of leaf points, one panel per coordinate pair.

use std::fmt::Write;

use smoothlin_core::Vector;

pub struct Series {
    pub label: String,
    pub colour: &'static str,
    pub points: Vec<Vector>,
}

const PANEL: f64 = 320.0;
const PAD: f64 = 24.0;

pub fn leaf_plot(title: &str, dim: usize, series: &[Series]) -> String {
    let pairs: Vec<(usize, usize)> = (0..dim).flat_map(|a| (a + 1..dim).map(move |b| (a, b))).collect();
    let width = PANEL * pairs.len().max(1) as f64;
    let height = PANEL + 40.0;
    let extent = series
        .iter()
        .flat_map(|s| s.points.iter())
        .map(|p| p.amax())
        .fold(1e-12f64, f64::max);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, r#"<text x="8" y="16" font-size="12" font-family="monospace">{title}</text>"#);
    for (k, (a, b)) in pairs.iter().enumerate() {
        let ox = k as f64 * PANEL;
        let oy = 28.0;
        let scale = (PANEL - 2.0 * PAD) / (2.0 * extent);
        let sx = |v: f64| ox + PANEL / 2.0 + v * scale;
        let sy = |v: f64| oy + PANEL / 2.0 - v * scale;
        let _ = writeln!(
            out,
            r##"<rect x="{:.1}" y="{oy:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="#999"/>"##,
            ox + PAD / 2.0,
            PANEL - PAD,
            PANEL - PAD
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" font-family="monospace">x{} vs x{}</text>"#,
            ox + PAD,
            oy + PANEL - 4.0,
            a + 1,
            b + 1
        );
        for s in series {
            for p in &s.points {
                let _ = writeln!(
                    out,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="{}"><title>{}</title></circle>"#,
                    sx(p[*a]),
                    sy(p[*b]),
                    s.colour,
                    s.label
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}
