//! Minimal SVG output: heatmaps, line histograms and reliability bars.

use std::fmt::Write;

use density_softmax::metrics::BinStats;

const W: f64 = 480.0;
const H: f64 = 480.0;
const MARGIN: f64 = 48.0;

// viridis anchors
const RAMP: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn color(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let f = x - i as f64;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    let mix = |p: f64, q: f64| (p + (q - p) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        W + 2.0 * MARGIN,
        H + 2.0 * MARGIN,
        W + 2.0 * MARGIN,
        H + 2.0 * MARGIN
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        MARGIN + W / 2.0,
        MARGIN / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, x: (f64, f64), y: (f64, f64), x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{W}" height="{H}" fill="none" stroke="black"/>"#
    );
    for (v, anchor, px, py) in [
        (x.0, "start", MARGIN, MARGIN + H + 16.0),
        (x.1, "end", MARGIN + W, MARGIN + H + 16.0),
    ] {
        let _ = writeln!(
            out,
            r#"<text x="{px}" y="{py}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{v:.3}</text>"#
        );
    }
    for (v, py) in [(y.0, MARGIN + H), (y.1, MARGIN + 10.0)] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{py}" font-family="sans-serif" font-size="11" text-anchor="end">{v:.3}</text>"#,
            MARGIN - 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        MARGIN + W / 2.0,
        MARGIN + H + 32.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        MARGIN + H / 2.0,
        MARGIN + H / 2.0,
        escape(y_label)
    );
}

/// `values` is row-major with `resolution` rows, row 0 at the bottom edge.
pub fn heatmap(
    title: &str,
    values: &[f64],
    resolution: usize,
    bounds: [f64; 4],
    range: (f64, f64),
) -> String {
    let mut out = String::new();
    open(&mut out, title);
    let cell = W / resolution as f64;
    let span = (range.1 - range.0).max(f64::MIN_POSITIVE);
    for r in 0..resolution {
        for c in 0..resolution {
            let v = values[r * resolution + c];
            let _ = writeln!(
                out,
                r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{}"/>"#,
                MARGIN + c as f64 * cell,
                MARGIN + H - (r + 1) as f64 * cell,
                cell,
                cell,
                color((v - range.0) / span)
            );
        }
    }
    axes(&mut out, (bounds[0], bounds[1]), (bounds[2], bounds[3]), "x0", "x1");
    out.push_str("</svg>\n");
    out
}

/// One polyline per series over shared bin edges.
pub fn histogram(title: &str, edges: &[f64], series: &[(String, Vec<f64>)]) -> String {
    let mut out = String::new();
    open(&mut out, title);
    let ymax = series
        .iter()
        .flat_map(|(_, v)| v.iter().copied())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let (x0, x1) = (edges[0], edges[edges.len() - 1]);
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * W;
    let py = |y: f64| MARGIN + H - y / ymax * H;
    for (k, (name, values)) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let mut pts = String::new();
        for (i, v) in values.iter().enumerate() {
            let _ = write!(
                pts,
                "{:.3},{:.3} {:.3},{:.3} ",
                px(edges[i]),
                py(*v),
                px(edges[i + 1]),
                py(*v)
            );
        }
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            pts.trim_end()
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{colour}">{}</text>"#,
            MARGIN + 8.0,
            MARGIN + 16.0 + 14.0 * k as f64,
            escape(name)
        );
    }
    axes(&mut out, (x0, x1), (0.0, ymax), "scaled likelihood", "fraction");
    out.push_str("</svg>\n");
    out
}

/// Accuracy bars per confidence bin with the identity diagonal.
pub fn reliability(title: &str, bins: &[BinStats]) -> String {
    let mut out = String::new();
    open(&mut out, title);
    for b in bins.iter().filter(|b| b.count > 0) {
        let x = MARGIN + b.lower * W;
        let w = (b.upper - b.lower) * W;
        let _ = writeln!(
            out,
            r##"<rect x="{x:.3}" y="{:.3}" width="{w:.3}" height="{:.3}" fill="#1f77b4" stroke="white"/>"##,
            MARGIN + H - b.acc * H,
            b.acc * H
        );
        let _ = writeln!(
            out,
            r##"<rect x="{x:.3}" y="{:.3}" width="{w:.3}" height="2" fill="#d62728"/>"##,
            MARGIN + H - b.conf * H - 1.0
        );
    }
    let _ = writeln!(
        out,
        r#"<line x1="{MARGIN}" y1="{}" x2="{}" y2="{MARGIN}" stroke="gray" stroke-dasharray="4 3"/>"#,
        MARGIN + H,
        MARGIN + W
    );
    axes(&mut out, (0.0, 1.0), (0.0, 1.0), "confidence", "accuracy");
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints() {
        assert_eq!(color(0.0), "#440154");
        assert_eq!(color(1.0), "#fde725");
        assert_eq!(color(f64::NAN), "#440154");
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
    }

    #[test]
    fn heatmap_has_one_rect_per_cell() {
        let s = heatmap("t", &[0.0, 0.5, 1.0, 0.25], 2, [0.0, 1.0, 0.0, 1.0], (0.0, 1.0));
        // cells plus the frame
        assert_eq!(s.matches("<rect").count(), 5);
    }
}
