//! Minimal SVG line charts: DER voltages and reactive set-points over time.

use std::fmt::Write;

use voltvar_core::sim::SimulationLog;
use voltvar_core::VoltageLimits;

const WIDTH: f64 = 900.0;
const PANEL_HEIGHT: f64 = 260.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 40.0;
const GAP: f64 = 60.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

struct Panel<'a> {
    title: &'a str,
    y_label: &'a str,
    series: Vec<Series>,
    /// Horizontal reference lines.
    guides: Vec<f64>,
}

/// Two stacked panels: true DER voltages with the band, and set-points in
/// kVAr. Event times are drawn as vertical dashed lines.
pub fn render_log(log: &SimulationLog, limits: &VoltageLimits, title: &str) -> String {
    let names = |prefix: &str| -> Vec<String> {
        log.der_buses
            .iter()
            .map(|b| format!("{prefix} bus {b}"))
            .collect()
    };
    let mut voltages: Vec<Series> = names("v")
        .into_iter()
        .map(|label| Series {
            label,
            points: Vec::new(),
        })
        .collect();
    let mut setpoints: Vec<Series> = names("q")
        .into_iter()
        .map(|label| Series {
            label,
            points: Vec::new(),
        })
        .collect();
    for r in &log.records {
        for (s, v) in voltages.iter_mut().zip(log.der_true(r)) {
            s.points.push((r.time_s, v));
        }
        for (s, q) in setpoints.iter_mut().zip(log.q_kvar(r)) {
            s.points.push((r.time_s, q));
        }
    }
    let events: Vec<f64> = log
        .records
        .iter()
        .filter(|r| !r.events.is_empty())
        .map(|r| r.time_s)
        .collect();
    let panels = [
        Panel {
            title: "DER voltages",
            y_label: "p.u.",
            series: voltages,
            guides: vec![limits.v_min, limits.v_max],
        },
        Panel {
            title: "reactive set-points",
            y_label: "kVAr",
            series: setpoints,
            guides: vec![0.0],
        },
    ];

    let height = MARGIN_TOP + panels.len() as f64 * (PANEL_HEIGHT + GAP);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let t_max = log
        .duration_s
        .max(log.records.last().map_or(1.0, |r| r.time_s));
    for (i, panel) in panels.iter().enumerate() {
        let top = MARGIN_TOP + i as f64 * (PANEL_HEIGHT + GAP);
        draw_panel(&mut svg, panel, top, t_max, &events);
    }
    svg.push_str("</svg>\n");
    svg
}

fn draw_panel(svg: &mut String, panel: &Panel, top: f64, t_max: f64, events: &[f64]) {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let values = panel
        .series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .chain(panel.guides.iter().copied())
        .filter(|v| v.is_finite());
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.08).max(1e-3);
    lo -= pad;
    hi += pad;
    let x = |t: f64| MARGIN_LEFT + t / t_max * plot_w;
    let y = |v: f64| top + (hi - v) / (hi - lo) * PANEL_HEIGHT;

    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN_LEFT}" y="{top}" width="{plot_w}" height="{PANEL_HEIGHT}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN_LEFT}" y="{}" font-size="13">{} [{}]</text>"#,
        top - 6.0,
        panel.title,
        panel.y_label
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
            MARGIN_LEFT - 6.0,
            y(v) + 4.0
        );
        let t = t_max * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{t:.0} s</text>"#,
            x(t),
            top + PANEL_HEIGHT + 16.0
        );
    }
    for &g in &panel.guides {
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN_LEFT}" x2="{:.1}" y1="{:.2}" y2="{:.2}" stroke="#999" stroke-dasharray="6 3"/>"##,
            MARGIN_LEFT + plot_w,
            y(g),
            y(g)
        );
    }
    for &t in events {
        let _ = writeln!(
            svg,
            r##"<line x1="{:.1}" x2="{:.1}" y1="{top}" y2="{}" stroke="#bbb" stroke-dasharray="2 3"/>"##,
            x(t),
            x(t),
            top + PANEL_HEIGHT
        );
    }
    for (k, s) in panel.series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut d = String::new();
        for (t, v) in s.points.iter().filter(|p| p.1.is_finite()) {
            let _ = write!(d, "{:.1},{:.2} ", x(*t), y(*v));
        }
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.6" points="{}"/>"#,
            d.trim_end()
        );
        let ly = top + 14.0 + 18.0 * k as f64;
        let lx = MARGIN_LEFT + plot_w + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
