//! Minimal SVG drawing for reports. Coordinates are printed with two
//! decimals so output is byte-stable.

use std::fmt::Write;

use crate::anchors::AnchorSet;
use crate::assign::{Assignment, Label};
use crate::scene::Scene;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Scene with full boxes (solid), visible boxes (dashed) and the centers of
/// each GT's positive anchors in the GT's color. Ignored anchors are grey.
pub fn scene_overlay(title: &str, scene: &Scene, anchors: &AnchorSet, assignment: &Assignment) -> String {
    let mut s = open(scene.image_w, scene.image_h + 24.0);
    let _ = writeln!(s, "<text x=\"4\" y=\"16\" font-size=\"14\">{}</text>", esc(title));
    let _ = writeln!(s, "<g transform=\"translate(0,24)\">");
    let _ = writeln!(
        s,
        "<rect x=\"0\" y=\"0\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#999\"/>",
        scene.image_w, scene.image_h
    );
    for (i, b) in scene.gts.boxes.iter().enumerate() {
        let c = color(i);
        let _ = writeln!(
            s,
            "<rect class=\"gt\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"{c}\" stroke-width=\"2\"/>",
            b.x1,
            b.y1,
            b.width(),
            b.height()
        );
        if let Some(v) = scene.visible.get(i) {
            let _ = writeln!(
                s,
                "<rect class=\"visible\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{c}\" fill-opacity=\"0.12\" stroke=\"{c}\" stroke-dasharray=\"4 3\"/>",
                v.x1,
                v.y1,
                v.width(),
                v.height()
            );
        }
    }
    for (j, l) in assignment.labels.iter().enumerate() {
        let p = anchors.centers[j];
        let (fill, r) = match l {
            Label::Positive(i) => (color(*i), 3.0),
            Label::Ignore => ("#bbbbbb", 1.5),
            Label::Negative => continue,
        };
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{r}\" fill=\"{fill}\"/>",
            p.x, p.y
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Axes {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD_L: f64 = 60.0;
const PAD_R: f64 = 130.0;
const PAD_T: f64 = 30.0;
const PAD_B: f64 = 45.0;

struct Frame {
    lo: (f64, f64),
    hi: (f64, f64),
    log_x: bool,
    log_y: bool,
}

impl Frame {
    fn new(series: &[Series], log_x: bool, log_y: bool) -> Self {
        let tx = |v: f64| if log_x { v.max(1e-12).log10() } else { v };
        let ty = |v: f64| if log_y { v.max(1e-12).log10() } else { v };
        let mut lo = (f64::INFINITY, f64::INFINITY);
        let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in series.iter().flat_map(|s| s.points.iter()) {
            if !(x.is_finite() && y.is_finite()) {
                continue;
            }
            lo = (lo.0.min(tx(*x)), lo.1.min(ty(*y)));
            hi = (hi.0.max(tx(*x)), hi.1.max(ty(*y)));
        }
        if !lo.0.is_finite() {
            lo = (0.0, 0.0);
            hi = (1.0, 1.0);
        }
        if hi.0 - lo.0 < 1e-9 {
            hi.0 = lo.0 + 1.0;
        }
        if hi.1 - lo.1 < 1e-9 {
            hi.1 = lo.1 + 1.0;
        }
        Self { lo, hi, log_x, log_y }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let x = if self.log_x { x.max(1e-12).log10() } else { x };
        let y = if self.log_y { y.max(1e-12).log10() } else { y };
        let u = (x - self.lo.0) / (self.hi.0 - self.lo.0);
        let v = (y - self.lo.1) / (self.hi.1 - self.lo.1);
        (PAD_L + u * (W - PAD_L - PAD_R), H - PAD_B - v * (H - PAD_T - PAD_B))
    }

    fn tick(&self, v: f64, log: bool) -> String {
        if log {
            format!("{:.3}", 10f64.powf(v))
        } else {
            format!("{v:.3}")
        }
    }
}

fn frame_and_legend(s: &mut String, f: &Frame, axes: &Axes, series: &[Series]) {
    let _ = writeln!(
        s,
        "<text x=\"{PAD_L}\" y=\"18\" font-size=\"14\">{}</text>",
        esc(&axes.title)
    );
    let (x0, y0) = (PAD_L, H - PAD_B);
    let (x1, y1) = (W - PAD_R, PAD_T);
    let _ = writeln!(
        s,
        "<path d=\"M{x0:.2} {y1:.2} L{x0:.2} {y0:.2} L{x1:.2} {y0:.2}\" fill=\"none\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        s,
        "<text x=\"{x0:.2}\" y=\"{:.2}\" font-size=\"10\">{}</text>",
        y0 + 14.0,
        f.tick(f.lo.0, f.log_x)
    );
    let _ = writeln!(
        s,
        "<text x=\"{x1:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\">{}</text>",
        y0 + 14.0,
        f.tick(f.hi.0, f.log_x)
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{y0:.2}\" font-size=\"10\" text-anchor=\"end\">{}</text>",
        x0 - 4.0,
        f.tick(f.lo.1, f.log_y)
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\">{}</text>",
        x0 - 4.0,
        y1 + 8.0,
        f.tick(f.hi.1, f.log_y)
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        0.5 * (x0 + x1),
        H - 8.0,
        esc(&axes.x_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.2})\">{}</text>",
        0.5 * (y0 + y1),
        0.5 * (y0 + y1),
        esc(&axes.y_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let y = PAD_T + 16.0 * k as f64;
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{y:.2}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{}</text>",
            W - PAD_R + 10.0,
            color(k),
            W - PAD_R + 24.0,
            y + 9.0,
            esc(&ser.name)
        );
    }
}

/// One polyline per series, with a marker per point.
pub fn line_chart(axes: &Axes, series: &[Series]) -> String {
    let f = Frame::new(series, axes.log_x, axes.log_y);
    let mut s = open(W, H);
    frame_and_legend(&mut s, &f, axes, series);
    for (k, ser) in series.iter().enumerate() {
        let pts: Vec<(f64, f64)> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| f.map(x, y))
            .collect();
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>",
            path.join(" "),
            color(k)
        );
        for (x, y) in pts {
            let _ = writeln!(
                s,
                "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.5\" fill=\"{}\"/>",
                color(k)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// One `<circle class="mark">` per point.
pub fn scatter(axes: &Axes, series: &[Series]) -> String {
    let f = Frame::new(series, axes.log_x, axes.log_y);
    let mut s = open(W, H);
    frame_and_legend(&mut s, &f, axes, series);
    for (k, ser) in series.iter().enumerate() {
        for &(x, y) in &ser.points {
            if !(x.is_finite() && y.is_finite()) {
                continue;
            }
            let (px, py) = f.map(x, y);
            let _ = writeln!(
                s,
                "<circle class=\"mark\" cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"{}\" fill-opacity=\"0.6\"/>",
                color(k)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axes() -> Axes {
        Axes {
            title: "t <1>".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x: true,
            log_y: false,
        }
    }

    #[test]
    fn scatter_has_one_mark_per_point() {
        let series = vec![
            Series {
                name: "a".into(),
                points: vec![(10.0, 0.0), (100.0, 1.0), (1000.0, 2.0)],
            },
            Series {
                name: "b".into(),
                points: vec![(50.0, 3.0)],
            },
        ];
        let svg = scatter(&axes(), &series);
        assert_eq!(svg.matches("class=\"mark\"").count(), 4);
        assert!(svg.contains("t &lt;1&gt;"));
        assert_eq!(svg, scatter(&axes(), &series));
    }

    #[test]
    fn empty_chart_is_well_formed() {
        let svg = line_chart(&axes(), &[]);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
    }
}
