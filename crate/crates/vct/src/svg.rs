//! Minimal SVG emission: line charts, scatter plots and contour lines.

use std::fmt::Write;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn num(x: f64) -> String {
    format!("{x:.2}")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    /// Bounds of the finite values, padded by 5%; `[0, 1]` when there are none.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Range {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.into_iter().filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo > hi {
            return Range { lo: 0.0, hi: 1.0 };
        }
        if hi - lo < 1e-12 * (1.0 + lo.abs()) {
            return Range { lo: lo - 0.5, hi: hi + 0.5 };
        }
        let pad = 0.05 * (hi - lo);
        Range { lo: lo - pad, hi: hi + pad }
    }

    fn ticks(&self, n: usize) -> Vec<f64> {
        (0..=n)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64)
            .collect()
    }
}

/// Plot area with data-to-pixel mapping; elements are appended in order.
pub struct Figure {
    x: Range,
    y: Range,
    title: String,
    xlabel: String,
    ylabel: String,
    body: String,
}

impl Figure {
    pub fn new(title: &str, xlabel: &str, ylabel: &str, x: Range, y: Range) -> Self {
        Figure {
            x,
            y,
            title: title.into(),
            xlabel: xlabel.into(),
            ylabel: ylabel.into(),
            body: String::new(),
        }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.lo) / (self.x.hi - self.x.lo) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.lo) / (self.y.hi - self.y.lo) * (HEIGHT - TOP - BOTTOM)
    }

    /// Polyline through the finite points; non-finite values break the line.
    pub fn polyline(&mut self, points: &[(f64, f64)], color: &str, width: f64) {
        let mut run: Vec<String> = Vec::new();
        let flush = |run: &mut Vec<String>, body: &mut String| {
            if run.len() >= 2 {
                let _ = writeln!(
                    body,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{}"/>"#,
                    run.join(" ")
                );
            }
            run.clear();
        };
        for &(x, y) in points {
            if x.is_finite() && y.is_finite() {
                run.push(format!("{},{}", num(self.px(x)), num(self.py(y))));
            } else {
                flush(&mut run, &mut self.body);
            }
        }
        flush(&mut run, &mut self.body);
    }

    pub fn points(&mut self, points: &[(f64, f64)], color: &str, radius: f64, opacity: f64) {
        for &(x, y) in points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let _ = writeln!(
                self.body,
                r#"<circle cx="{}" cy="{}" r="{radius}" fill="{color}" fill-opacity="{opacity}"/>"#,
                num(self.px(x)),
                num(self.py(y))
            );
        }
    }

    pub fn segments(&mut self, segs: &[((f64, f64), (f64, f64))], color: &str, width: f64, opacity: f64) {
        for &((x1, y1), (x2, y2)) in segs {
            if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
                continue;
            }
            let _ = writeln!(
                self.body,
                r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{color}" stroke-width="{width}" stroke-opacity="{opacity}"/>"#,
                num(self.px(x1)),
                num(self.py(y1)),
                num(self.px(x2)),
                num(self.py(y2))
            );
        }
    }

    /// Legend entries stacked in the top-right corner.
    pub fn legend(&mut self, entries: &[(&str, &str)]) {
        for (i, (label, color)) in entries.iter().enumerate() {
            let y = TOP + 14.0 + 16.0 * i as f64;
            let x = WIDTH - RIGHT - 150.0;
            let _ = writeln!(
                self.body,
                r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}" font-size="12">{}</text>"#,
                num(x),
                num(y - 9.0),
                num(x + 14.0),
                num(y),
                escape(label)
            );
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">
<rect width="100%" height="100%" fill="white"/>"#
        );
        let (x0, x1) = (self.px(self.x.lo), self.px(self.x.hi));
        let (y0, y1) = (self.py(self.y.lo), self.py(self.y.hi));
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            num(x0),
            num(y1),
            num(x1 - x0),
            num(y0 - y1)
        );
        for t in self.x.ticks(5) {
            let p = num(self.px(t));
            let _ = writeln!(
                s,
                r#"<line x1="{p}" y1="{}" x2="{p}" y2="{}" stroke="black"/><text x="{p}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
                num(y0),
                num(y0 + 5.0),
                num(y0 + 18.0),
                tick_label(t)
            );
        }
        for t in self.y.ticks(5) {
            let p = num(self.py(t));
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{p}" x2="{}" y2="{p}" stroke="black"/><text x="{}" y="{p}" font-size="11" text-anchor="end" dominant-baseline="middle">{}</text>"#,
                num(x0 - 5.0),
                num(x0),
                num(x0 - 8.0),
                tick_label(t)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" font-size="15" text-anchor="middle">{}</text>"#,
            num(WIDTH / 2.0),
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            num((x0 + x1) / 2.0),
            num(HEIGHT - 12.0),
            escape(&self.xlabel)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            num((y0 + y1) / 2.0),
            num((y0 + y1) / 2.0),
            escape(&self.ylabel)
        );
        s.push_str(&self.body);
        s.push_str("</svg>\n");
        s
    }
}

fn tick_label(t: f64) -> String {
    let a = t.abs();
    if a != 0.0 && !(1e-3..1e4).contains(&a) {
        format!("{t:.2e}")
    } else {
        format!("{t:.3}")
    }
}

pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
    pub color: &'a str,
    pub width: f64,
}

pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter().copied());
    let mut fig = Figure::new(
        title,
        xlabel,
        ylabel,
        Range::of(all().map(|p| p.0)),
        Range::of(all().map(|p| p.1)),
    );
    for s in series {
        fig.polyline(&s.points, s.color, s.width);
    }
    let entries: Vec<(&str, &str)> = series.iter().map(|s| (s.label, s.color)).collect();
    fig.legend(&entries);
    fig.render()
}

/// Values on a regular grid: `values[j * nx + i]` at `(x.lo + i dx, y.lo + j dy)`.
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub x: Range,
    pub y: Range,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn coord(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.x.lo + (self.x.hi - self.x.lo) * i as f64 / (self.nx - 1) as f64,
            self.y.lo + (self.y.hi - self.y.lo) * j as f64 / (self.ny - 1) as f64,
        )
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    /// Marching squares: unjoined segments of the `level` set. Saddle cells
    /// are resolved by the cell-centre average.
    pub fn contour(&self, level: f64) -> Vec<((f64, f64), (f64, f64))> {
        let mut segs = Vec::new();
        if self.nx < 2 || self.ny < 2 {
            return segs;
        }
        for j in 0..self.ny - 1 {
            for i in 0..self.nx - 1 {
                // Corners counter-clockwise from bottom-left.
                let c = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
                let v = c.map(|(a, b)| self.at(a, b));
                if v.iter().any(|x| !x.is_finite()) {
                    continue;
                }
                let p = c.map(|(a, b)| self.coord(a, b));
                let cross = |e: usize| {
                    let (a, b) = (e, (e + 1) % 4);
                    let s = (level - v[a]) / (v[b] - v[a]);
                    (p[a].0 + s * (p[b].0 - p[a].0), p[a].1 + s * (p[b].1 - p[a].1))
                };
                let edges: Vec<usize> = (0..4)
                    .filter(|&e| (v[e] >= level) != (v[(e + 1) % 4] >= level))
                    .collect();
                match edges.len() {
                    2 => segs.push((cross(edges[0]), cross(edges[1]))),
                    4 => {
                        let centre_above = v.iter().sum::<f64>() / 4.0 >= level;
                        let corner0_above = v[0] >= level;
                        if centre_above == corner0_above {
                            segs.push((cross(0), cross(1)));
                            segs.push((cross(2), cross(3)));
                        } else {
                            segs.push((cross(3), cross(0)));
                            segs.push((cross(1), cross(2)));
                        }
                    }
                    _ => {}
                }
            }
        }
        segs
    }
}
