//! Self-contained SVG line plots (no external renderer required).

use std::fmt::Write;

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Fixed axis ranges; derived from the data when absent.
    pub x_range: Option<(f64, f64)>,
    pub y_range: Option<(f64, f64)>,
    /// Dashed y = x reference line (ROC chance level).
    pub diagonal: bool,
}

const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 616.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 344.0;
const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

fn data_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.04;
    (lo - pad, hi + pad)
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 10_000.0 || v.abs() < 1e-3) {
        return format!("{v:.1e}");
    }
    let mut s = format!("{v:.3}");
    while s.contains('.') && (s.ends_with('0') || s.ends_with('.')) {
        s.pop();
    }
    s
}

fn panel_markup(out: &mut String, panel: &Panel, y_offset: f64) {
    let (x_lo, x_hi) = panel.x_range.unwrap_or_else(|| {
        data_range(
            panel
                .series
                .iter()
                .flat_map(|s| s.points.iter().map(|p| p.0)),
        )
    });
    let (y_lo, y_hi) = panel.y_range.unwrap_or_else(|| {
        data_range(
            panel
                .series
                .iter()
                .flat_map(|s| s.points.iter().map(|p| p.1)),
        )
    });
    let px = |v: f64| LEFT + (v - x_lo) / (x_hi - x_lo) * (RIGHT - LEFT);
    let py = |v: f64| BOTTOM - (v - y_lo) / (y_hi - y_lo) * (BOTTOM - TOP);

    let _ = writeln!(out, r#"<g transform="translate(0,{y_offset})">"#);
    let _ = writeln!(
        out,
        r##"<rect x="0" y="0" width="{PANEL_W}" height="{PANEL_H}" fill="#ffffff"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-family="monospace" font-size="14">{}</text>"#,
        (LEFT + RIGHT) / 2.0,
        panel.title
    );

    // Grid, ticks, labels: five divisions per axis.
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let gx = LEFT + f * (RIGHT - LEFT);
        let gy = BOTTOM - f * (BOTTOM - TOP);
        let _ = writeln!(
            out,
            r##"<line x1="{gx:.2}" y1="{TOP}" x2="{gx:.2}" y2="{BOTTOM}" stroke="#e0e0e0" stroke-width="1"/>"##
        );
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{gy:.2}" x2="{RIGHT}" y2="{gy:.2}" stroke="#e0e0e0" stroke-width="1"/>"##
        );
        let _ = writeln!(
            out,
            r#"<text x="{gx:.2}" y="{}" text-anchor="middle" font-family="monospace" font-size="11">{}</text>"#,
            BOTTOM + 16.0,
            fmt_tick(x_lo + f * (x_hi - x_lo))
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" text-anchor="end" font-family="monospace" font-size="11">{}</text>"#,
            LEFT - 6.0,
            gy + 4.0,
            fmt_tick(y_lo + f * (y_hi - y_lo))
        );
    }
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT}" y="{TOP}" width="{}" height="{}" fill="none" stroke="#333333" stroke-width="1"/>"##,
        RIGHT - LEFT,
        BOTTOM - TOP
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="monospace" font-size="12">{}</text>"#,
        (LEFT + RIGHT) / 2.0,
        BOTTOM + 36.0,
        panel.x_label
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="monospace" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
        (TOP + BOTTOM) / 2.0,
        (TOP + BOTTOM) / 2.0,
        panel.y_label
    );

    if panel.diagonal {
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999999" stroke-width="1" stroke-dasharray="5,4"/>"##,
            px(x_lo),
            py(x_lo.max(y_lo)),
            px(x_hi),
            py(x_hi.min(y_hi))
        );
    }

    for (i, series) in panel.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut path = String::new();
        for (x, y) in &series.points {
            let _ = write!(path, "{:.2},{:.2} ", px(*x), py(*y));
        }
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            path.trim_end()
        );
        // Legend entry inside the top-right corner of the plot.
        let ly = TOP + 14.0 + i as f64 * 16.0;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{ly:.2}" x2="{}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            RIGHT - 120.0,
            RIGHT - 96.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.2}" font-family="monospace" font-size="11">{}</text>"#,
            RIGHT - 90.0,
            ly + 4.0,
            series.label
        );
    }
    let _ = writeln!(out, "</g>");
}

/// Render panels stacked vertically into one standalone SVG document.
pub fn render(panels: &[Panel]) -> String {
    let height = PANEL_H * panels.len() as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PANEL_W}" height="{height}" viewBox="0 0 {PANEL_W} {height}">"#
    );
    for (i, panel) in panels.iter().enumerate() {
        panel_markup(&mut out, panel, i as f64 * PANEL_H);
    }
    out.push_str("</svg>\n");
    out
}
