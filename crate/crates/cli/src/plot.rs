//! Minimal SVG line charts for simulation traces.

use std::fmt::Write as _;
use std::path::Path;

use adaptive_cbf::simulator::SimulationTrace;
use anyhow::{Context, Result};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 300.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
/// Upper bound on plotted points per series.
const MAX_POINTS: usize = 4000;

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Shaded region between two curves sharing abscissae.
pub struct Band {
    pub label: String,
    pub lower: Vec<(f64, f64)>,
    pub upper: Vec<(f64, f64)>,
}

pub struct Chart {
    pub title: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub bands: Vec<Band>,
}

fn decimate(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let stride = points.len().div_ceil(MAX_POINTS).max(1);
    let mut out: Vec<_> = points.iter().step_by(stride).copied().collect();
    if let (Some(&last), Some(&kept)) = (points.last(), out.last()) {
        if last != kept {
            out.push(last);
        }
    }
    out
}

impl Chart {
    pub fn render(&self) -> String {
        let all = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .chain(self.bands.iter().flat_map(|b| b.lower.iter().chain(b.upper.iter())))
            .filter(|p| p.0.is_finite() && p.1.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in all {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 <= 0.0 {
            x1 = x0 + 1.0;
        }
        let pad = 0.05 * (y1 - y0).max(1e-12);
        let (y0, y1) = (y0 - pad, y1 + pad);
        let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
        let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
        let path = |pts: &[(f64, f64)]| {
            pts.iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect::<Vec<_>>()
                .join(" ")
        };

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, self.title);
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            WIDTH - 2.0 * MARGIN,
            HEIGHT - 2.0 * MARGIN
        );
        for (label, x, y, anchor) in [
            (format!("{x0:.3}"), MARGIN, HEIGHT - MARGIN + 15.0, "start"),
            (format!("{x1:.3}"), WIDTH - MARGIN, HEIGHT - MARGIN + 15.0, "end"),
            (format!("{y0:.3}"), MARGIN - 4.0, HEIGHT - MARGIN, "end"),
            (format!("{y1:.3}"), MARGIN - 4.0, MARGIN + 10.0, "end"),
            ("t [s]".to_string(), WIDTH / 2.0, HEIGHT - 15.0, "middle"),
        ] {
            let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}">{label}</text>"#);
        }
        let _ = writeln!(
            s,
            r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            self.y_label
        );
        if y0 < 0.0 && y1 > 0.0 {
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN}" x2="{}" y1="{y:.2}" y2="{y:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
                WIDTH - MARGIN,
                y = sy(0.0)
            );
        }
        let mut legend = 0;
        for b in &self.bands {
            let lower = decimate(&b.lower);
            let mut upper = decimate(&b.upper);
            upper.reverse();
            let _ = writeln!(
                s,
                r##"<polygon points="{} {}" fill="#bbbbbb" fill-opacity="0.5" stroke="none"><title>{}</title></polygon>"##,
                path(&lower),
                path(&upper),
                b.label
            );
            let _ = writeln!(
                s,
                r##"<text x="{}" y="{}" fill="#777">{}</text>"##,
                MARGIN + 10.0,
                MARGIN + 15.0 + 14.0 * legend as f64,
                b.label
            );
            legend += 1;
        }
        for (k, series) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.2"/>"#,
                path(&decimate(&series.points))
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" fill="{color}">{}</text>"#,
                MARGIN + 10.0,
                MARGIN + 15.0 + 14.0 * legend as f64,
                series.label
            );
            legend += 1;
        }
        s.push_str("</svg>\n");
        s
    }
}

fn series(trace: &SimulationTrace, label: &str, value: impl Fn(usize) -> f64) -> Series {
    Series {
        label: format!("{label} ({})", trace.variant),
        points: (0..trace.rows.len()).map(|i| (trace.rows[i].t, value(i))).collect(),
    }
}

/// Writes `velocity.svg`, `input.svg`, `barrier.svg` and `disturbance.svg`.
///
/// The disturbance chart uses the first trace and shades `d̂₂ ± γ`.
pub fn write_plots(dir: &Path, traces: &[&SimulationTrace], gamma: f64) -> Result<()> {
    let velocity = Chart {
        title: "Follower speed".into(),
        y_label: "v_f [m/s]".into(),
        series: traces.iter().map(|t| series(t, "v_f", |i| t.rows[i].x[1])).collect(),
        bands: vec![],
    };
    let input = Chart {
        title: "Wheel force".into(),
        y_label: "u [N]".into(),
        series: traces.iter().map(|t| series(t, "u", |i| t.rows[i].u[0])).collect(),
        bands: vec![],
    };
    let barrier = Chart {
        title: "Safety barrier".into(),
        y_label: "h [m]".into(),
        series: traces.iter().map(|t| series(t, "h", |i| t.rows[i].h)).collect(),
        bands: vec![],
    };
    let mut charts = vec![("velocity.svg", velocity), ("input.svg", input), ("barrier.svg", barrier)];
    if let Some(first) = traces.first() {
        let rows = &first.rows;
        let band = Band {
            label: format!("d_hat_1 ± γ, γ = {gamma:.4}"),
            lower: rows.iter().map(|r| (r.t, r.d_hat[1] - gamma)).collect(),
            upper: rows.iter().map(|r| (r.t, r.d_hat[1] + gamma)).collect(),
        };
        charts.push((
            "disturbance.svg",
            Chart {
                title: "Disturbance on follower speed".into(),
                y_label: "d_1 [m/s²]".into(),
                series: vec![
                    series(first, "d_1 true", |i| rows[i].d_true[1]),
                    series(first, "d_1 estimated", |i| rows[i].d_hat[1]),
                ],
                bands: vec![band],
            },
        ));
    }
    for (name, chart) in charts {
        let path = dir.join(name);
        std::fs::write(&path, chart.render()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}
