//! Minimal SVG line charts: polylines, markers, axes, a legend and dashed asymptotes.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    Line,
    Markers,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

#[derive(Clone, Debug, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub log_y: bool,
    /// x positions of vertical dashed lines.
    pub asymptotes: Vec<f64>,
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Chart {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            ..Default::default()
        }
    }

    pub fn line(mut self, name: &str, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series {
            name: name.into(),
            points,
            style: Style::Line,
        });
        self
    }

    pub fn markers(mut self, name: &str, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series {
            name: name.into(),
            points,
            style: Style::Markers,
        });
        self
    }

    fn ty(&self, y: f64) -> Option<f64> {
        if !y.is_finite() || (self.log_y && y <= 0.0) {
            None
        } else if self.log_y {
            Some(y.log10())
        } else {
            Some(y)
        }
    }

    fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let mut b: Option<(f64, f64, f64, f64)> = None;
        for s in &self.series {
            for &(x, y) in &s.points {
                let (Some(y), true) = (self.ty(y), x.is_finite()) else {
                    continue;
                };
                b = Some(match b {
                    None => (x, x, y, y),
                    Some((x0, x1, y0, y1)) => (x0.min(x), x1.max(x), y0.min(y), y1.max(y)),
                });
            }
        }
        b.map(|(x0, x1, y0, y1)| {
            let pad = |a: f64, b: f64| {
                if b > a {
                    (b - a) * 0.05
                } else {
                    a.abs().max(1.0) * 0.05
                }
            };
            let (px, py) = (pad(x0, x1), pad(y0, y1));
            (x0 - px, x1 + px, y0 - py, y1 + py)
        })
    }

    pub fn to_svg(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            (LEFT + W - RIGHT) / 2.0,
            esc(&self.title)
        );
        let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        let Some((x0, x1, y0, y1)) = self.bounds() else {
            s.push_str("</svg>\n");
            return s;
        };
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;
        for k in 0..=5 {
            let xv = x0 + (x1 - x0) * k as f64 / 5.0;
            let yv = y0 + (y1 - y0) * k as f64 / 5.0;
            let ylab = if self.log_y {
                format!("1e{yv:.1}")
            } else {
                fmt_tick(yv)
            };
            let _ = writeln!(
                s,
                r#"<line x1="{0:.1}" y1="{1}" x2="{0:.1}" y2="{2}" stroke="black"/>"#,
                sx(xv),
                TOP + ph,
                TOP + ph + 5.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
                sx(xv),
                TOP + ph + 18.0,
                fmt_tick(xv)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{1:.1}" x2="{LEFT}" y2="{1:.1}" stroke="black"/>"#,
                LEFT - 5.0,
                sy(yv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
                LEFT - 8.0,
                sy(yv) + 4.0,
                ylab
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 12.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );
        for a in &self.asymptotes {
            if *a >= x0 && *a <= x1 {
                let _ = writeln!(
                    s,
                    r##"<line x1="{0:.1}" y1="{TOP}" x2="{0:.1}" y2="{1}" stroke="#777" stroke-dasharray="5,4"/>"##,
                    sx(*a),
                    TOP + ph
                );
            }
        }
        for (k, ser) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            match ser.style {
                Style::Line => {
                    // a non-finite value breaks the polyline
                    let mut run: Vec<String> = Vec::new();
                    let flush = |run: &mut Vec<String>, s: &mut String| {
                        if run.len() > 1 {
                            let _ = writeln!(
                                s,
                                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                                run.join(" ")
                            );
                        }
                        run.clear();
                    };
                    for &(x, y) in &ser.points {
                        match self.ty(y) {
                            Some(y) if x.is_finite() => {
                                run.push(format!("{:.2},{:.2}", sx(x), sy(y)))
                            }
                            _ => flush(&mut run, &mut s),
                        }
                    }
                    flush(&mut run, &mut s);
                }
                Style::Markers => {
                    for &(x, y) in &ser.points {
                        if let (Some(y), true) = (self.ty(y), x.is_finite()) {
                            let _ = writeln!(
                                s,
                                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="none" stroke="{color}"/>"#,
                                sx(x),
                                sy(y)
                            );
                        }
                    }
                }
            }
            let ly = TOP + 10.0 + 18.0 * k as f64;
            let lx = W - RIGHT + 12.0;
            match ser.style {
                Style::Line => {
                    let _ = writeln!(
                        s,
                        r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="1.5"/>"#,
                        lx + 20.0
                    );
                }
                Style::Markers => {
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{}" cy="{ly}" r="3" fill="none" stroke="{color}"/>"#,
                        lx + 10.0
                    );
                }
            }
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}">{}</text>"#,
                lx + 26.0,
                ly + 4.0,
                esc(&ser.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        let t = format!("{v:.2}");
        t.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_series_and_asymptote() {
        let mut c = Chart::new("rho", "gamma", "rho")
            .line(
                "theory",
                vec![
                    (0.0, 1.0),
                    (1.0, 2.0),
                    (2.0, f64::INFINITY),
                    (3.0, 1.0),
                    (4.0, 0.5),
                ],
            )
            .markers("pep", vec![(0.5, 1.5)]);
        c.asymptotes.push(2.0);
        let svg = c.to_svg();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("<circle"));
    }

    #[test]
    fn log_axis_skips_non_positive_values() {
        let mut c =
            Chart::new("e", "gamma", "e").line("e", vec![(0.0, 0.0), (1.0, 10.0), (2.0, 100.0)]);
        c.log_y = true;
        let svg = c.to_svg();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("1e"));
    }

    #[test]
    fn empty_chart_is_valid() {
        let svg = Chart::new("a", "b", "c").to_svg();
        assert!(svg.contains("</svg>"));
    }
}
