//! Self-contained SVG charts: no scripts, no external assets.

use std::fmt::Write;

use qisa_lab::train::{moving_average, LossRow};

const W: f64 = 800.0;
const H: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 48.0;
const SMOOTH: usize = 50;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x1 - self.x0).max(f64::MIN_POSITIVE);
        LEFT + (v - self.x0) / span * (W - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y1 - self.y0).max(f64::MIN_POSITIVE);
        H - BOTTOM - (v - self.y0) / span * (H - TOP - BOTTOM)
    }

    fn axes(&self, out: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let (xl, xr, yt, yb) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="24" font-size="16" text-anchor="middle">{}</text>"#,
            W / 2.0,
            escape(title)
        );
        let _ = writeln!(out, r##"<path d="M{xl} {yt} V{yb} H{xr}" fill="none" stroke="#333"/>"##);
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let yv = self.y0 + f * (self.y1 - self.y0);
            let xv = self.x0 + f * (self.x1 - self.x0);
            let (py, px) = (self.y(yv), self.x(xv));
            let _ = writeln!(
                out,
                r##"<line x1="{xl}" y1="{py:.1}" x2="{xr}" y2="{py:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{yv:.3}</text>"##,
                xl - 6.0,
                py + 4.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{px:.1}" y="{:.1}" font-size="11" text-anchor="middle">{xv:.0}</text>"#,
                yb + 16.0
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{xlabel}</text>"#,
            (xl + xr) / 2.0,
            H - 8.0
        );
        let _ = writeln!(
            out,
            r#"<text x="16" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">{ylabel}</text>"#,
            (yt + yb) / 2.0,
            (yt + yb) / 2.0
        );
    }
}

fn open() -> String {
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif">
<rect width="100%" height="100%" fill="white"/>
"#
    )
}

fn polyline(out: &mut String, f: &Frame, pts: &[(f64, f64)], colour: &str, width: f64) {
    if pts.is_empty() {
        return;
    }
    let coords: Vec<String> = pts
        .iter()
        .map(|&(x, y)| format!("{:.1},{:.1}", f.x(x), f.y(y)))
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="{width}"/>"#,
        coords.join(" ")
    );
}

fn legend(out: &mut String, items: &[(&str, &str)]) {
    for (i, (label, colour)) in items.iter().enumerate() {
        let y = TOP + 12.0 + 16.0 * i as f64;
        let x = W - RIGHT - 150.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{:.1}" width="12" height="4" fill="{colour}"/><text x="{:.1}" y="{:.1}" font-size="11">{label}</text>"#,
            y - 4.0,
            x + 18.0,
            y + 1.0
        );
    }
}

/// Training loss (raw and window-50 average) and test probes against step.
pub fn loss_chart(rows: &[LossRow], title: &str) -> String {
    let series = |split: &str| -> Vec<(f64, f64)> {
        rows.iter()
            .filter(|r| r.split == split && r.value.is_finite())
            .map(|r| (r.step as f64, r.value))
            .collect()
    };
    let train = series("train");
    let test = series("test");
    let raw: Vec<f64> = train.iter().map(|p| p.1).collect();
    let smooth: Vec<(f64, f64)> = train
        .iter()
        .zip(moving_average(&raw, SMOOTH))
        .map(|(p, s)| (p.0, s))
        .collect();
    let all = train.iter().chain(&test);
    let (mut x1, mut y0, mut y1) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    let pad = ((y1 - y0) * 0.05).max(1e-3);
    let f = Frame {
        x0: 0.0,
        x1,
        y0: (y0 - pad).max(0.0),
        y1: y1 + pad,
    };
    let mut out = open();
    f.axes(&mut out, title, "step", "cross-entropy");
    polyline(&mut out, &f, &train, "#9ecae1", 1.0);
    polyline(&mut out, &f, &smooth, "#08519c", 2.0);
    polyline(&mut out, &f, &test, "#d94801", 2.0);
    for &(x, y) in &test {
        let _ = writeln!(
            out,
            r##"<circle cx="{:.1}" cy="{:.1}" r="3" fill="#d94801"/>"##,
            f.x(x),
            f.y(y)
        );
    }
    legend(
        &mut out,
        &[("train", "#9ecae1"), ("train (avg 50)", "#08519c"), ("test", "#d94801")],
    );
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: one group per label, one bar per series.
pub fn bar_chart(title: &str, ylabel: &str, groups: &[(String, Vec<Option<f64>>)], series: &[&str]) -> String {
    const COLOURS: [&str; 4] = ["#08519c", "#d94801", "#238b45", "#6a51a3"];
    let y1 = groups
        .iter()
        .flat_map(|g| g.1.iter().flatten())
        .cloned()
        .fold(0.0f64, f64::max)
        .max(1e-9)
        * 1.1;
    let f = Frame {
        x0: 0.0,
        x1: groups.len().max(1) as f64,
        y0: 0.0,
        y1,
    };
    let mut out = open();
    f.axes(&mut out, title, "", ylabel);
    let group_w = (W - LEFT - RIGHT) / groups.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (gi, (label, values)) in groups.iter().enumerate() {
        let gx = f.x(gi as f64) + group_w * 0.1;
        for (si, v) in values.iter().enumerate() {
            let Some(v) = v else { continue };
            let top = f.y(*v);
            let _ = writeln!(
                out,
                r#"<rect x="{:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
                gx + si as f64 * bar_w,
                bar_w * 0.95,
                (H - BOTTOM - top).max(0.0),
                COLOURS[si % COLOURS.len()]
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{}</text>"#,
            gx + group_w * 0.4,
            H - BOTTOM + 30.0,
            escape(label)
        );
    }
    let items: Vec<(&str, &str)> = series
        .iter()
        .enumerate()
        .map(|(i, s)| (*s, COLOURS[i % COLOURS.len()]))
        .collect();
    legend(&mut out, &items);
    out.push_str("</svg>\n");
    out
}
