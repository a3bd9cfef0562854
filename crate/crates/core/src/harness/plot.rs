use std::fmt::Write;

use super::{LayerRouteSummary, Provenance};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 50.0;

/// Grouped bar chart of the dispatch fractions `f` (dark) and mean router
/// probabilities `P` (light) of one layer, with the uniform level `1/N`
/// dashed.
pub fn routing_svg(layer: &LayerRouteSummary, prov: &Provenance) -> String {
    let n = layer.n_experts.max(1);
    let top = layer
        .f
        .iter()
        .chain(&layer.p)
        .fold(1.0 / n as f64, |m, &v| m.max(v))
        .max(1e-9)
        * 1.1;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let y = |v: f64| HEIGHT - MARGIN - v / top * plot_h;
    let group = plot_w / n as f64;
    let bar = group * 0.35;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        "<!-- config_hash={} seed={} -->",
        prov.config_hash, prov.seed
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{MARGIN}" y="20">{}: f (dark) and P (light), drop rate {:.3}, entropy {:.3} / {:.3}</text>"#,
        layer.layer, layer.drop_rate, layer.f_entropy, layer.max_entropy
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/>"#,
        HEIGHT - MARGIN,
        WIDTH - MARGIN
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>"#,
        HEIGHT - MARGIN
    );
    for tick in 0..=4 {
        let v = top * tick as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            MARGIN - 4.0,
            y(v) + 4.0
        );
    }
    for i in 0..layer.f.len().min(layer.p.len()) {
        let x0 = MARGIN + group * i as f64 + group * 0.15;
        for (j, (v, fill)) in [(layer.f[i], "#1f4e79"), (layer.p[i], "#9dc3e6")].into_iter().enumerate() {
            let x = x0 + bar * j as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{bar:.1}" height="{:.1}" fill="{fill}"/>"#,
                y(v),
                HEIGHT - MARGIN - y(v)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{i}</text>"#,
            x0 + bar,
            HEIGHT - MARGIN + 16.0
        );
    }
    let u = y(1.0 / n as f64);
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{u:.1}" x2="{}" y2="{u:.1}" stroke="gray" stroke-dasharray="4 3"/>"#,
        WIDTH - MARGIN
    );
    s.push_str("</svg>\n");
    s
}
