//! Grouped bar chart of per-device metrics, written as plain SVG.

use std::fmt::Write;

use fids_core::metrics::MetricsRow;

pub const WIDTH: u32 = 800;
pub const HEIGHT: u32 = 480;

const METRICS: [(&str, &str); 4] = [
    ("Accuracy", "#1f77b4"),
    ("Precision", "#ff7f0e"),
    ("Recall", "#2ca02c"),
    ("Kappa", "#d62728"),
];

const PLOT_LEFT: f64 = 70.0;
const PLOT_RIGHT: f64 = 780.0;
const PLOT_TOP: f64 = 60.0;
const PLOT_BOTTOM: f64 = 390.0;

fn values(row: &MetricsRow) -> [f64; 4] {
    let m = &row.metrics;
    [m.accuracy, m.precision, m.recall, m.kappa]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One group per row, one bar per metric, each labelled as a percentage.
pub fn bar_chart(title: &str, groups: &[MetricsRow]) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
    )
    .unwrap();
    writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="30" font-size="18" text-anchor="middle">{}</text>"#, WIDTH / 2, escape(title)).unwrap();

    let height = PLOT_BOTTOM - PLOT_TOP;
    for tick in 0..=5 {
        let v = tick as f64 * 20.0;
        let y = PLOT_BOTTOM - height * v / 100.0;
        writeln!(
            s,
            r##"<line x1="{PLOT_LEFT}" y1="{y:.1}" x2="{PLOT_RIGHT}" y2="{y:.1}" stroke="#dddddd"/>"##
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{v:.0}%</text>"#,
            PLOT_LEFT - 6.0,
            y + 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<line x1="{PLOT_LEFT}" y1="{PLOT_BOTTOM}" x2="{PLOT_RIGHT}" y2="{PLOT_BOTTOM}" stroke="black"/>"#
    )
    .unwrap();

    let group_w = (PLOT_RIGHT - PLOT_LEFT) / groups.len().max(1) as f64;
    let bar_w = group_w * 0.8 / METRICS.len() as f64;
    for (g, row) in groups.iter().enumerate() {
        let x0 = PLOT_LEFT + g as f64 * group_w + group_w * 0.1;
        for (j, (v, (_, colour))) in values(row).into_iter().zip(METRICS).enumerate() {
            let x = x0 + j as f64 * bar_w;
            let h = height * v.clamp(0.0, 1.0);
            writeln!(
                s,
                r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{colour}"/>"#,
                PLOT_BOTTOM - h,
                bar_w - 2.0
            )
            .unwrap();
            writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="middle">{:.2}%</text>"#,
                x + (bar_w - 2.0) / 2.0,
                PLOT_BOTTOM - h - 4.0,
                v * 100.0
            )
            .unwrap();
        }
        writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{} (round {})</text>"#,
            x0 + group_w * 0.4,
            PLOT_BOTTOM + 20.0,
            escape(&row.device),
            row.round
        )
        .unwrap();
    }

    let legend_y = HEIGHT as f64 - 40.0;
    let slot = 140.0;
    let legend_x0 = (WIDTH as f64 - slot * METRICS.len() as f64) / 2.0;
    for (j, (name, colour)) in METRICS.iter().enumerate() {
        let x = legend_x0 + j as f64 * slot;
        writeln!(s, r#"<rect x="{x:.1}" y="{legend_y:.1}" width="14" height="14" fill="{colour}"/>"#).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="13">{name}</text>"#, x + 20.0, legend_y + 12.0).unwrap();
    }
    s.push_str("</svg>\n");
    s
}

/// Fixed-width text table of the same rows.
pub fn summary_table(rows: &[MetricsRow]) -> String {
    let mut s = format!(
        "{:<10} {:>5} {:>10} {:>10} {:>10} {:>10}  {}\n",
        "device", "round", "accuracy%", "precision", "recall", "kappa", "stop_reason"
    );
    for r in rows {
        writeln!(
            s,
            "{:<10} {:>5} {:>10.3} {:>10.4} {:>10.4} {:>10.4}  {}",
            r.device,
            r.round,
            r.metrics.accuracy * 100.0,
            r.metrics.precision,
            r.metrics.recall,
            r.metrics.kappa,
            r.stop_reason
        )
        .unwrap();
    }
    s
}
