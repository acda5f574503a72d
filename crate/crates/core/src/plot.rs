//! SVG density histograms of known versus unknown scores.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN_LEFT: f64 = 56.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 44.0;

const KNOWN_COLOR: &str = "#3b75af";
const UNKNOWN_COLOR: &str = "#d6452c";

/// Densities of `values` over `bins` equal-width bins of `[lo, hi]`; each sums to 1 times bin width.
pub fn densities(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = if width > 0.0 { ((v - lo) / width).floor() as isize } else { 0 };
        counts[b.clamp(0, bins as isize - 1) as usize] += 1;
    }
    let total = values.len().max(1) as f64;
    let w = if width > 0.0 { width } else { 1.0 };
    counts.iter().map(|&c| c as f64 / (total * w)).collect()
}

/// Overlaid known/unknown score histograms as a standalone SVG document.
pub fn score_histogram_svg(known: &[f64], unknown: &[f64], bins: usize, title: &str) -> String {
    let bins = bins.max(1);
    let all = known.iter().chain(unknown).copied().filter(|v| v.is_finite());
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let dk = densities(known, lo, hi, bins);
    let du = densities(unknown, lo, hi, bins);
    let ymax = dk.iter().chain(&du).copied().fold(0.0, f64::max).max(1e-12);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let bar_w = plot_w / bins as f64;
    let x_of = |i: usize| MARGIN_LEFT + i as f64 * bar_w;
    let y_of = |d: f64| MARGIN_TOP + plot_h * (1.0 - d / ymax);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for (dens, color) in [(&dk, KNOWN_COLOR), (&du, UNKNOWN_COLOR)] {
        for (i, &d) in dens.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            let y = y_of(d);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.5"/>"#,
                x_of(i),
                y,
                bar_w,
                MARGIN_TOP + plot_h - y
            );
        }
    }
    let base = MARGIN_TOP + plot_h;
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_LEFT}" y1="{base}" x2="{:.1}" y2="{base}" stroke="black"/>"#,
        MARGIN_LEFT + plot_w
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{base}" stroke="black"/>"#
    );
    for t in 0..=4 {
        let f = t as f64 / 4.0;
        let x = MARGIN_LEFT + f * plot_w;
        let _ = writeln!(
            s,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{:.3}</text>"#,
            base + 16.0,
            lo + f * (hi - lo)
        );
        let y = MARGIN_TOP + plot_h * (1.0 - f);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.2}</text>"#,
            MARGIN_LEFT - 6.0,
            y + 4.0,
            f * ymax
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">unknown score</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 8.0
    );
    let legend_x = MARGIN_LEFT + plot_w - 150.0;
    for (i, (label, color, n)) in [("known", KNOWN_COLOR, known.len()), ("unknown", UNKNOWN_COLOR, unknown.len())]
        .into_iter()
        .enumerate()
    {
        let y = MARGIN_TOP + 8.0 + 18.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{legend_x:.1}" y="{y:.1}" width="12" height="12" fill="{color}" fill-opacity="0.5"/>"#
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{label} (n={n})</text>"#, legend_x + 18.0, y + 10.0);
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn densities_integrate_to_one() {
        let v: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let d = densities(&v, 0.0, 1.0, 10);
        let area: f64 = d.iter().map(|x| x * 0.1).sum();
        assert!((area - 1.0).abs() < 1e-12);
        assert_eq!(densities(&[5.0], 0.0, 1.0, 4), vec![0.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn svg_is_deterministic_and_well_formed() {
        let a = score_histogram_svg(&[0.1, 0.2, 0.2], &[0.8, 0.9], 20, "a < b");
        assert_eq!(a, score_histogram_svg(&[0.1, 0.2, 0.2], &[0.8, 0.9], 20, "a < b"));
        assert!(a.starts_with("<svg"));
        assert!(a.trim_end().ends_with("</svg>"));
        assert!(a.contains("a &lt; b"));
        assert!(a.contains("unknown (n=2)"));
    }

    #[test]
    fn degenerate_inputs() {
        let s = score_histogram_svg(&[], &[], 10, "");
        assert!(s.contains("</svg>"));
        let s = score_histogram_svg(&[0.5; 3], &[0.5], 10, "");
        assert!(!s.contains("NaN"));
    }
}
