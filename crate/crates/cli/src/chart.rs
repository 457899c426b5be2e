//! Static SVG bar charts.

use std::fmt::Write;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChartError {
    #[error("no values to plot")]
    EmptyInput,
    #[error("{labels} labels for {values} values")]
    LengthMismatch { labels: usize, values: usize },
    #[error("bar {index} has invalid value {value}")]
    InvalidValue { index: usize, value: f64 },
}

pub const PLOT_HEIGHT: f64 = 300.0;
const BAR_SLOT: f64 = 32.0;
const BAR_WIDTH: f64 = 24.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 50.0;
const LABEL_SPACE: f64 = 140.0;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Renders one bar per value, heights proportional to the values with the
/// largest filling the plot height. Output depends only on the inputs.
pub fn render_bar_chart(labels: &[String], values: &[f64], title: &str) -> Result<String, ChartError> {
    if values.is_empty() {
        return Err(ChartError::EmptyInput);
    }
    if labels.len() != values.len() {
        return Err(ChartError::LengthMismatch {
            labels: labels.len(),
            values: values.len(),
        });
    }
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
        return Err(ChartError::InvalidValue { index, value });
    }

    let max = values.iter().copied().fold(0.0, f64::max);
    let width = LEFT + BAR_SLOT * values.len() as f64 + RIGHT;
    let height = TOP + PLOT_HEIGHT + LABEL_SPACE;
    let base = TOP + PLOT_HEIGHT;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text class="title" x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        width / 2.0,
        escape(title)
    );
    let _ = writeln!(svg, r##"<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{base}" stroke="#333"/>"##);
    let _ = writeln!(
        svg,
        r##"<line class="axis" x1="{LEFT}" y1="{base}" x2="{}" y2="{base}" stroke="#333"/>"##,
        width - RIGHT
    );
    let _ = writeln!(
        svg,
        r#"<text class="tick" x="{}" y="{}" text-anchor="end">{}</text>"#,
        LEFT - 6.0,
        TOP + 4.0,
        escape(&format!("{max:.2}"))
    );
    let _ = writeln!(svg, r#"<text class="tick" x="{}" y="{}" text-anchor="end">0</text>"#, LEFT - 6.0, base + 4.0);

    for (i, (label, &v)) in labels.iter().zip(values).enumerate() {
        let h = if max > 0.0 { v / max * PLOT_HEIGHT } else { 0.0 };
        let x = LEFT + BAR_SLOT * i as f64 + (BAR_SLOT - BAR_WIDTH) / 2.0;
        let label = escape(label);
        let _ = writeln!(
            svg,
            r##"<rect class="bar" data-label="{label}" data-value="{v}" x="{x}" y="{}" width="{BAR_WIDTH}" height="{h}" fill="#4878a8"/>"##,
            base - h
        );
        let cx = x + BAR_WIDTH / 2.0;
        let cy = base + 10.0;
        let _ = writeln!(
            svg,
            r#"<text class="label" x="{cx}" y="{cy}" text-anchor="end" transform="rotate(-60 {cx} {cy})">{label}</text>"#
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
