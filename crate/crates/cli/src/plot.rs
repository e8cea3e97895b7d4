//! Four-panel SVG of training curves.

use std::fmt::Write as _;

use dlms_core::solvers::Record;

const WIDTH: f64 = 1000.0;
const HEIGHT: f64 = 760.0;
const PANEL_W: f64 = 400.0;
const PANEL_H: f64 = 260.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

pub struct Series {
    pub label: String,
    pub records: Vec<Record>,
}

struct Panel {
    title: &'static str,
    log: bool,
    value: fn(&Record) -> f64,
}

const PANELS: [Panel; 4] = [
    Panel {
        title: "train loss",
        log: true,
        value: |r| r.train_loss,
    },
    Panel {
        title: "test loss",
        log: true,
        value: |r| r.test_loss,
    },
    Panel {
        title: "trace of Hessian",
        log: true,
        value: |r| r.paper_trace,
    },
    Panel {
        title: "nuclear norm",
        log: false,
        value: |r| r.nuclear_norm,
    },
];

fn fmt(x: f64) -> String {
    format!("{x:.2}")
}

fn tick_label(v: f64, log: bool) -> String {
    if log {
        format!("1e{}", v as i64)
    } else if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

/// Points usable on the panel axis (finite, and positive on log axes),
/// already mapped through `log10` where needed.
fn points(series: &Series, panel: &Panel) -> Vec<(f64, f64)> {
    series
        .records
        .iter()
        .filter_map(|r| {
            let y = (panel.value)(r);
            if !y.is_finite() || (panel.log && y <= 0.0) {
                return None;
            }
            Some((r.step as f64, if panel.log { y.log10() } else { y }))
        })
        .collect()
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    values.fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

fn render_panel(out: &mut String, index: usize, panel: &Panel, series: &[Series]) {
    let left = 70.0 + (index % 2) as f64 * (PANEL_W + 90.0);
    let top = 50.0 + (index / 2) as f64 * (PANEL_H + 100.0);
    let data: Vec<Vec<(f64, f64)>> = series.iter().map(|s| points(s, panel)).collect();

    let x_range = range(data.iter().flatten().map(|p| p.0)).unwrap_or((0.0, 1.0));
    let (mut y_lo, mut y_hi) = range(data.iter().flatten().map(|p| p.1)).unwrap_or((0.0, 1.0));
    if panel.log {
        y_lo = y_lo.floor();
        y_hi = y_hi.ceil();
    }
    if y_hi - y_lo < 1e-12 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let x_span = (x_range.1 - x_range.0).max(1.0);
    let sx = |x: f64| left + (x - x_range.0) / x_span * PANEL_W;
    let sy = |y: f64| top + PANEL_H - (y - y_lo) / (y_hi - y_lo) * PANEL_H;

    let _ = writeln!(out, "<g class=\"panel\">");
    let _ = writeln!(
        out,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#000\"/>",
        fmt(left),
        fmt(top),
        fmt(PANEL_W),
        fmt(PANEL_H)
    );
    let scale = if panel.log { " (log10)" } else { "" };
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"14\">{}{}</text>",
        fmt(left + PANEL_W / 2.0),
        fmt(top - 12.0),
        panel.title,
        scale
    );

    let y_ticks: Vec<f64> = if panel.log {
        let (a, b) = (y_lo as i64, y_hi as i64);
        let stride = ((b - a) / 6).max(1);
        (a..=b).step_by(stride as usize).map(|v| v as f64).collect()
    } else {
        (0..=4)
            .map(|k| y_lo + (y_hi - y_lo) * k as f64 / 4.0)
            .collect()
    };
    for y in y_ticks {
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#ddd\"/>",
            fmt(left),
            fmt(left + PANEL_W),
            y = fmt(sy(y))
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"10\">{}</text>",
            fmt(left - 4.0),
            fmt(sy(y) + 3.0),
            tick_label(y, panel.log)
        );
    }
    for k in 0..=4 {
        let x = x_range.0 + x_span * k as f64 / 4.0;
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{}</text>",
            fmt(sx(x)),
            fmt(top + PANEL_H + 14.0),
            x.round() as i64
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">step</text>",
        fmt(left + PANEL_W / 2.0),
        fmt(top + PANEL_H + 30.0)
    );

    for (k, (s, pts)) in series.iter().zip(&data).enumerate() {
        let color = COLORS[k % COLORS.len()];
        if !pts.is_empty() {
            let path: Vec<String> = pts
                .iter()
                .map(|&(x, y)| format!("{},{}", fmt(sx(x)), fmt(sy(y))))
                .collect();
            let _ = writeln!(
                out,
                "<polyline class=\"series\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\" points=\"{}\"/>",
                path.join(" ")
            );
        }
        let ly = top + 14.0 + 16.0 * k as f64;
        let lx = left + PANEL_W - 110.0;
        let _ = writeln!(
            out,
            "<g class=\"legend\"><line x1=\"{}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"2\"/>\
             <text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text></g>",
            fmt(lx),
            fmt(lx + 20.0),
            fmt(lx + 25.0),
            fmt(ly + 4.0),
            escape(&s.label),
            y = fmt(ly)
        );
    }
    let _ = writeln!(out, "</g>");
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Renders all series into one self-contained SVG document.
pub fn render(series: &[Series]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">",
        w = WIDTH,
        h = HEIGHT
    );
    let _ = writeln!(out, "<rect width=\"100%\" height=\"100%\" fill=\"#fff\"/>");
    for (index, panel) in PANELS.iter().enumerate() {
        render_panel(&mut out, index, panel, series);
    }
    out.push_str("</svg>\n");
    out
}
