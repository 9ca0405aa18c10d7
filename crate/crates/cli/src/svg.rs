//! Minimal SVG emitter: scatter, polyline and heatmap layers on one pair of
//! axes.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 140.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

pub const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

enum Layer {
    Scatter { pts: Vec<(f64, f64)>, color: String, radius: f64, label: Option<String> },
    Line { pts: Vec<(f64, f64)>, color: String, label: Option<String>, markers: bool },
    Heat { x0: f64, x1: f64, y0: f64, y1: f64, nx: usize, ny: usize, values: Vec<f64> },
    Segments { segs: Vec<((f64, f64), (f64, f64))>, color: String },
}

pub struct Plot {
    title: String,
    x_label: String,
    y_label: String,
    log_x: bool,
    log_y: bool,
    equal_aspect: bool,
    layers: Vec<Layer>,
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Plot {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x: false,
            log_y: false,
            equal_aspect: false,
            layers: Vec::new(),
        }
    }

    pub fn log_x(mut self) -> Self {
        self.log_x = true;
        self
    }

    pub fn log_y(mut self) -> Self {
        self.log_y = true;
        self
    }

    pub fn equal_aspect(mut self) -> Self {
        self.equal_aspect = true;
        self
    }

    pub fn scatter(&mut self, pts: Vec<(f64, f64)>, color: &str, radius: f64, label: Option<&str>) {
        self.layers.push(Layer::Scatter { pts, color: color.into(), radius, label: label.map(Into::into) });
    }

    pub fn line(&mut self, pts: Vec<(f64, f64)>, color: &str, label: Option<&str>) {
        self.layers.push(Layer::Line { pts, color: color.into(), label: label.map(Into::into), markers: true });
    }

    pub fn segments(&mut self, segs: Vec<((f64, f64), (f64, f64))>, color: &str) {
        self.layers.push(Layer::Segments { segs, color: color.into() });
    }

    /// Row-major values over `[x0, x1] x [y0, y1]`, row index along x.
    pub fn heatmap(&mut self, x: (f64, f64), y: (f64, f64), nx: usize, ny: usize, values: Vec<f64>) {
        self.layers.push(Layer::Heat { x0: x.0, x1: x.1, y0: y.0, y1: y.1, nx, ny, values });
    }

    fn tx(&self, v: f64) -> f64 {
        if self.log_x {
            v.log10()
        } else {
            v
        }
    }

    fn ty(&self, v: f64) -> f64 {
        if self.log_y {
            v.log10()
        } else {
            v
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        let mut see = |x: f64, y: f64| {
            if x.is_finite() && y.is_finite() {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        };
        for l in &self.layers {
            match l {
                Layer::Scatter { pts, .. } | Layer::Line { pts, .. } => {
                    pts.iter().for_each(|&(x, y)| see(self.tx(x), self.ty(y)))
                }
                Layer::Segments { segs, .. } => segs.iter().for_each(|&(a, b)| {
                    see(self.tx(a.0), self.ty(a.1));
                    see(self.tx(b.0), self.ty(b.1));
                }),
                Layer::Heat { x0: a, x1: b, y0: c, y1: d, .. } => {
                    see(*a, *c);
                    see(*b, *d);
                }
            }
        }
        if !x0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        let pad = |lo: f64, hi: f64| {
            if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let p = 0.04 * (hi - lo);
                (lo - p, hi + p)
            }
        };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        if self.equal_aspect {
            let pw = WIDTH - MARGIN_L - MARGIN_R;
            let ph = HEIGHT - MARGIN_T - MARGIN_B;
            let scale = ((x1 - x0) / pw).max((y1 - y0) / ph);
            let (cx, cy) = (0.5 * (x0 + x1), 0.5 * (y0 + y1));
            return (cx - 0.5 * scale * pw, cx + 0.5 * scale * pw, cy - 0.5 * scale * ph, cy + 0.5 * scale * ph);
        }
        (x0, x1, y0, y1)
    }

    pub fn render(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        let px = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| MARGIN_T + ph - (y - y0) / (y1 - y0) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, "<!-- mollescore {} -->", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<clipPath id="plot"><rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}"/></clipPath>"#);
        let _ = writeln!(s, r#"<g clip-path="url(#plot)">"#);
        let mut legend = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Heat { x0: a, x1: b, y0: c, y1: d, nx, ny, values } => {
                    let lo = values.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
                    let hi = values.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
                    let (cw, chh) = ((b - a) / *nx as f64, (d - c) / *ny as f64);
                    for i in 0..*nx {
                        for j in 0..*ny {
                            let v = values[i * ny + j];
                            let u = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
                            let (xa, xb) = (px(a + i as f64 * cw), px(a + (i + 1) as f64 * cw));
                            let (ya, yb) = (py(c + (j + 1) as f64 * chh), py(c + j as f64 * chh));
                            let _ = writeln!(
                                s,
                                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                                xa,
                                ya,
                                (xb - xa) + 0.3,
                                (yb - ya) + 0.3,
                                heat_color(u)
                            );
                        }
                    }
                }
                Layer::Scatter { pts, color, radius, label } => {
                    for &(x, y) in pts {
                        let (x, y) = (self.tx(x), self.ty(y));
                        if x.is_finite() && y.is_finite() {
                            let _ = writeln!(
                                s,
                                r#"<circle cx="{:.2}" cy="{:.2}" r="{radius}" fill="{color}" fill-opacity="0.7"/>"#,
                                px(x),
                                py(y)
                            );
                        }
                    }
                    if let Some(l) = label {
                        legend.push((l.clone(), color.clone()));
                    }
                }
                Layer::Line { pts, color, label, markers } => {
                    let path: Vec<String> = pts
                        .iter()
                        .map(|&(x, y)| (self.tx(x), self.ty(y)))
                        .filter(|(x, y)| x.is_finite() && y.is_finite())
                        .map(|(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                        .collect();
                    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#, path.join(" "));
                    if *markers {
                        for p in &path {
                            let (a, b) = p.split_once(',').unwrap();
                            let _ = writeln!(s, r#"<circle cx="{a}" cy="{b}" r="2.5" fill="{color}"/>"#);
                        }
                    }
                    if let Some(l) = label {
                        legend.push((l.clone(), color.clone()));
                    }
                }
                Layer::Segments { segs, color } => {
                    for &(a, b) in segs {
                        let _ = writeln!(
                            s,
                            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="1.5"/>"#,
                            px(self.tx(a.0)),
                            py(self.ty(a.1)),
                            px(self.tx(b.0)),
                            py(self.ty(b.1))
                        );
                    }
                }
            }
        }
        let _ = writeln!(s, "</g>");
        let _ = writeln!(s, r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for (v, label) in ticks(x0, x1, self.log_x) {
            let x = px(v);
            let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/>"#, MARGIN_T + ph, MARGIN_T + ph + 5.0);
            let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{label}</text>"#, MARGIN_T + ph + 18.0);
        }
        for (v, label) in ticks(y0, y1, self.log_y) {
            let y = py(v);
            let _ = writeln!(s, r#"<line x1="{}" y1="{y:.2}" x2="{MARGIN_L}" y2="{y:.2}" stroke="black"/>"#, MARGIN_L - 5.0);
            let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#, MARGIN_L - 8.0, y + 4.0);
        }
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, MARGIN_L + pw / 2.0, escape(&self.title));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, MARGIN_L + pw / 2.0, HEIGHT - 10.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            MARGIN_T + ph / 2.0,
            escape(&self.y_label)
        );
        for (i, (label, color)) in legend.iter().enumerate() {
            let y = MARGIN_T + 10.0 + 18.0 * i as f64;
            let x = WIDTH - MARGIN_R + 10.0;
            let _ = writeln!(s, r#"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/>"#, y - 9.0);
            let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, x + 14.0, escape(label));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// White to dark blue.
fn heat_color(u: f64) -> String {
    let u = u.clamp(0.0, 1.0);
    let r = (255.0 * (1.0 - u)) as u8;
    let g = (255.0 * (1.0 - 0.8 * u)) as u8;
    let b = (255.0 * (1.0 - 0.45 * u)) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Tick positions (in plotted coordinates) with labels.
fn ticks(lo: f64, hi: f64, log: bool) -> Vec<(f64, String)> {
    if log {
        let (a, b) = (lo.ceil() as i64, hi.floor() as i64);
        if b >= a && b - a <= 12 {
            return (a..=b).map(|e| (e as f64, format!("1e{e}"))).collect();
        }
    }
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut v = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while v <= hi + 1e-9 * step && out.len() < 20 {
        let label = if log { format!("{:.3}", 10f64.powf(v)) } else { format_tick(v, step) };
        out.push((v, label));
        v += step;
    }
    out
}

fn format_tick(v: f64, step: f64) -> String {
    let digits = (-step.log10().floor()).max(0.0) as usize;
    let v = if v.abs() < 1e-12 * step { 0.0 } else { v };
    format!("{v:.digits$}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_every_layer() {
        let mut p = Plot::new("t", "x", "y");
        p.scatter(vec![(0.0, 0.0), (1.0, 2.0)], PALETTE[0], 2.0, Some("pts"));
        p.line(vec![(0.0, 1.0), (1.0, 0.5)], PALETTE[1], Some("line"));
        p.heatmap((0.0, 1.0), (0.0, 1.0), 2, 2, vec![0.0, 1.0, 2.0, 3.0]);
        p.segments(vec![((0.0, 0.0), (1.0, 1.0))], "black");
        let s = p.render();
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert_eq!(s.matches("<circle").count(), 4);
        assert_eq!(s.matches("<polyline").count(), 1);
        assert!(s.contains("pts") && s.contains("line"));
    }

    #[test]
    fn log_axes_skip_non_positive_values() {
        let mut p = Plot::new("t", "x", "y").log_x().log_y();
        p.line(vec![(0.0, 1.0), (0.1, 1.0), (1.0, 10.0)], PALETTE[0], None);
        let s = p.render();
        assert!(s.contains("1e0"));
        assert_eq!(s.matches("<circle").count(), 2);
    }

    #[test]
    fn ticks_are_round_numbers() {
        let t = ticks(0.0, 1.0, false);
        assert_eq!(t.first().unwrap().1, "0.0");
        assert!(t.iter().any(|(_, l)| l == "0.4"));
        assert_eq!(escape("a<b&c"), "a&lt;b&amp;c");
    }
}
