//! Minimal SVG charts: line chart, bar chart with error bars, heatmap.
//!
//! Every plot area carries its data ranges as `data-*` attributes and every
//! mark its source value, so a chart can be checked against the CSV written
//! next to it by re-parsing the XML.

use std::fmt::Write;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#393b79", "#637939",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Affine map from data to pixel coordinates over the plot area.
#[derive(Debug, Clone, Copy)]
struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        Self { x: widen(x), y: widen(y) }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">
<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>
<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>
"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<g class="axes" stroke="black" fill="none"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#
    );
    for k in 0..=5 {
        let xv = f.x.0 + (f.x.1 - f.x.0) * k as f64 / 5.0;
        let yv = f.y.0 + (f.y.1 - f.y.0) * k as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            f.px(xv),
            y0 + 18.0,
            tick(xv),
            x0 - 6.0,
            f.py(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text><text transform="translate(18 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 15.0,
        escape(x_label),
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn tick(v: f64) -> String {
    let r = (v * 1000.0).round() / 1000.0;
    if r == 0.0 { "0".into() } else { r.to_string() }
}

fn plot_open(out: &mut String, f: &Frame) {
    let _ = writeln!(
        out,
        r#"<g class="plot" data-x-min="{}" data-x-max="{}" data-y-min="{}" data-y-max="{}" data-px-left="{LEFT}" data-px-right="{}" data-px-top="{TOP}" data-px-bottom="{}">"#,
        f.x.0,
        f.x.1,
        f.y.0,
        f.y.1,
        WIDTH - RIGHT,
        HEIGHT - BOTTOM
    );
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// A named series of `(x, y)` points.
pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

/// Line chart; each series is one polyline whose pixel coordinates map back
/// to data through the plot group's ranges.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let xr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let (xr, yr) = if xr.0.is_finite() { (xr, yr) } else { ((0.0, 1.0), (0.0, 1.0)) };
    let f = Frame::new(xr, yr);
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f, x_label, y_label);
    plot_open(&mut out, &f);
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut pts = String::with_capacity(s.points.len() * 16);
        for &(x, y) in &s.points {
            let _ = write!(pts, "{:.3},{:.3} ", f.px(x), f.py(y));
        }
        let _ = writeln!(
            out,
            r#"<polyline data-series="{}" fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#,
            escape(s.name),
            pts.trim_end()
        );
        let ly = TOP + 16.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<g class="legend"><line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text></g>"#,
            WIDTH - RIGHT + 10.0,
            WIDTH - RIGHT + 30.0,
            WIDTH - RIGHT + 35.0,
            ly + 4.0,
            escape(s.name)
        );
    }
    out.push_str("</g>\n</svg>\n");
    out
}

/// One bar with a symmetric error bar.
pub struct Bar<'a> {
    pub label: &'a str,
    pub value: f64,
    pub error: f64,
}

/// Bars on `[0, 1]`, grouped by category; groups are drawn side by side.
pub fn bar_chart(title: &str, y_label: &str, group_names: &[&str], groups: &[Vec<Bar>]) -> String {
    let f = Frame::new((0.0, 1.0), (0.0, 1.0));
    let mut out = String::new();
    header(&mut out, title);
    let n_cat = groups.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let plot_w = WIDTH - LEFT - RIGHT;
    let slot = plot_w / n_cat as f64;
    let bar_w = 0.8 * slot / groups.len().max(1) as f64;
    let _ = writeln!(
        out,
        r#"<g class="axes" stroke="black"><line x1="{LEFT}" y1="{0}" x2="{1}" y2="{0}"/><line x1="{LEFT}" y1="{0}" x2="{LEFT}" y2="{TOP}"/></g>"#,
        HEIGHT - BOTTOM,
        WIDTH - RIGHT
    );
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, f.py(v) + 4.0, tick(v));
    }
    let _ = writeln!(
        out,
        r#"<text transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        (HEIGHT - BOTTOM + TOP) / 2.0,
        escape(y_label)
    );
    plot_open(&mut out, &f);
    for (g, bars) in groups.iter().enumerate() {
        let color = PALETTE[g % PALETTE.len()];
        for (c, b) in bars.iter().enumerate() {
            let x = LEFT + c as f64 * slot + 0.1 * slot + g as f64 * bar_w;
            let top = f.py(b.value.clamp(0.0, 1.0));
            let _ = writeln!(
                out,
                r#"<rect class="bar" data-group="{}" data-label="{}" data-value="{}" data-error="{}" x="{x:.2}" y="{top:.3}" width="{bar_w:.2}" height="{:.3}" fill="{color}"/>"#,
                escape(group_names.get(g).copied().unwrap_or("")),
                escape(b.label),
                b.value,
                b.error,
                HEIGHT - BOTTOM - top
            );
            let cx = x + bar_w / 2.0;
            let _ = writeln!(
                out,
                r#"<line x1="{cx:.2}" y1="{:.3}" x2="{cx:.2}" y2="{:.3}" stroke="black"/>"#,
                f.py((b.value + b.error).min(1.0)),
                f.py((b.value - b.error).max(0.0))
            );
            if g == 0 {
                let _ = writeln!(
                    out,
                    r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{}</text>"#,
                    LEFT + (c as f64 + 0.5) * slot,
                    HEIGHT - BOTTOM + 18.0,
                    escape(b.label)
                );
            }
        }
        let ly = TOP + 16.0 * g as f64;
        let _ = writeln!(
            out,
            r#"<g class="legend"><rect x="{:.1}" y="{:.1}" width="12" height="10" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text></g>"#,
            WIDTH - RIGHT + 10.0,
            ly - 6.0,
            WIDTH - RIGHT + 28.0,
            ly + 4.0,
            escape(group_names.get(g).copied().unwrap_or(""))
        );
    }
    out.push_str("</g>\n</svg>\n");
    out
}

/// Grey level for a survival fraction: black at 0, white at 1, strictly
/// increasing in between.
pub fn mu_color(mu: f64) -> String {
    let level = (mu.clamp(0.0, 1.0) * 255.0).round() as u8;
    format!("#{level:02x}{level:02x}{level:02x}")
}

/// One heatmap tile.
pub struct Tile {
    pub x: f64,
    pub y: f64,
    pub mu: Option<f64>,
    pub count: usize,
}

/// Heatmap of tiles centered on a lattice with the given spacing. Tiles
/// without a value are hatched.
pub fn heatmap(title: &str, x_label: &str, y_label: &str, tiles: &[Tile], spacing: f64) -> String {
    let half = spacing / 2.0;
    let xr = range(tiles.iter().flat_map(|t| [t.x - half, t.x + half]));
    let yr = range(tiles.iter().flat_map(|t| [t.y - half, t.y + half]));
    let (xr, yr) = if xr.0.is_finite() { (xr, yr) } else { ((0.0, 1.0), (0.0, 1.0)) };
    let f = Frame::new(xr, yr);
    let mut out = String::new();
    header(&mut out, title);
    out.push_str(
        r##"<defs><pattern id="insufficient" width="6" height="6" patternUnits="userSpaceOnUse"><rect width="6" height="6" fill="#f4d6d6"/><path d="M0,6 L6,0" stroke="#c08080"/></pattern></defs>
"##,
    );
    axes(&mut out, &f, x_label, y_label);
    plot_open(&mut out, &f);
    for t in tiles {
        let (x0, x1) = (f.px(t.x - half), f.px(t.x + half));
        let (y0, y1) = (f.py(t.y + half), f.py(t.y - half));
        let (fill, mu) = match t.mu {
            Some(m) => (mu_color(m), m.to_string()),
            None => ("url(#insufficient)".to_string(), "insufficient".to_string()),
        };
        let _ = writeln!(
            out,
            r#"<rect class="cell" data-p="{}" data-q="{}" data-mu="{mu}" data-count="{}" x="{x0:.3}" y="{y0:.3}" width="{:.3}" height="{:.3}" fill="{fill}"/>"#,
            t.x,
            t.y,
            t.count,
            x1 - x0,
            y1 - y0
        );
    }
    out.push_str("</g>\n");
    // Color bar.
    let bx = WIDTH - RIGHT + 30.0;
    for k in 0..=20 {
        let m = k as f64 / 20.0;
        let y = HEIGHT - BOTTOM - m * (HEIGHT - TOP - BOTTOM - 20.0) - 10.0;
        let _ = writeln!(
            out,
            r#"<rect class="scale" data-mu="{m}" x="{bx}" y="{y:.2}" width="20" height="{:.2}" fill="{}" stroke="none"/>"#,
            (HEIGHT - TOP - BOTTOM - 20.0) / 20.0,
            mu_color(m)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}">mu = 1</text><text x="{:.1}" y="{:.1}">mu = 0</text>"#,
        bx + 26.0,
        TOP + 24.0,
        bx + 26.0,
        HEIGHT - BOTTOM - 6.0
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn color_scale_is_monotone() {
        let lum = |m: f64| u8::from_str_radix(&mu_color(m)[1..3], 16).unwrap();
        assert_eq!(mu_color(0.0), "#000000");
        assert_eq!(mu_color(1.0), "#ffffff");
        for k in 0..100 {
            assert!(lum(k as f64 / 100.0) <= lum((k + 1) as f64 / 100.0));
        }
    }

    #[test]
    fn titles_are_escaped() {
        let s = line_chart("a < b & c", "t", "v", &[]);
        assert!(s.contains("a &lt; b &amp; c"));
        assert!(roxmltree::Document::parse(&s).is_ok());
    }

    #[test]
    fn line_points_map_back_to_data() {
        let pts = vec![(0.0, 0.95), (1.0, 1.0), (2.0, 0.3)];
        let s = line_chart("v", "t", "u", &[Series { name: "MV-01", points: pts.clone() }]);
        let doc = roxmltree::Document::parse(&s).unwrap();
        let plot = doc.descendants().find(|n| n.attribute("class") == Some("plot")).unwrap();
        let a = |k: &str| plot.attribute(k).unwrap().parse::<f64>().unwrap();
        let line = plot.children().find(|n| n.has_tag_name("polyline")).unwrap();
        for (txt, (x, y)) in line.attribute("points").unwrap().split(' ').zip(pts) {
            let (px, py) = txt.split_once(',').unwrap();
            let (px, py): (f64, f64) = (px.parse().unwrap(), py.parse().unwrap());
            let xd = a("data-x-min") + (px - a("data-px-left")) / (a("data-px-right") - a("data-px-left")) * (a("data-x-max") - a("data-x-min"));
            let yd = a("data-y-min") + (a("data-px-bottom") - py) / (a("data-px-bottom") - a("data-px-top")) * (a("data-y-max") - a("data-y-min"));
            assert!((xd - x).abs() < 1e-4 && (yd - y).abs() < 1e-4);
        }
    }

    #[test]
    fn heatmap_and_bars_are_valid_xml() {
        let tiles = [
            Tile { x: 0.0, y: 0.0, mu: Some(0.25), count: 100 },
            Tile { x: 0.5, y: 0.0, mu: None, count: 3 },
        ];
        let s = heatmap("map", "P", "Q", &tiles, 0.5);
        let doc = roxmltree::Document::parse(&s).unwrap();
        let cells: Vec<_> = doc.descendants().filter(|n| n.attribute("class") == Some("cell")).collect();
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[1].attribute("data-mu"), Some("insufficient"));
        let bars = bar_chart("mu", "mu", &["pq"], &[vec![Bar { label: "MV-01", value: 0.9, error: 0.05 }]]);
        assert!(roxmltree::Document::parse(&bars).is_ok());
    }
}
