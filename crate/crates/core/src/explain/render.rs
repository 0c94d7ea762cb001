use std::fmt::Write as _;
use std::ops::Range;

use super::AttributionReport;

/// Returned by [`context_contribution_ratio`] when the context sum is (nearly) zero.
pub const RATIO_SENTINEL: f64 = f64::INFINITY;
const RATIO_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Ansi,
    Html,
}

/// Sign and normalized intensity (|φ| / max |φ|) of one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupColor {
    pub positive: bool,
    pub intensity: f64,
}

pub fn group_colors(report: &AttributionReport) -> Vec<GroupColor> {
    let max = report.phi.iter().fold(0.0f64, |m, p| m.max(p.abs()));
    report
        .phi
        .iter()
        .map(|&p| GroupColor {
            positive: p >= 0.0,
            intensity: if max > 0.0 { p.abs() / max } else { 0.0 },
        })
        .collect()
}

// Positive contributions shade towards blue, negative towards red.
fn rgb(color: GroupColor) -> (u8, u8, u8) {
    let fade = (255.0 * (1.0 - color.intensity)).round() as u8;
    if color.positive {
        (fade, fade, 255)
    } else {
        (255, fade, fade)
    }
}

fn header(report: &AttributionReport) -> (String, f64, String) {
    let best = crate::util::argmax(&report.predicted);
    let predicted = report
        .predicted_label
        .clone()
        .unwrap_or_else(|| format!("class {best}"));
    let target = report
        .target_label
        .clone()
        .unwrap_or_else(|| format!("class {}", report.target));
    (predicted, report.predicted[best], target)
}

pub fn render_report(report: &AttributionReport, format: ReportFormat) -> String {
    let colors = group_colors(report);
    let (predicted, prob, target) = header(report);
    let mut out = String::new();
    match format {
        ReportFormat::Ansi => {
            let _ = writeln!(
                out,
                "prediction: {predicted} ({prob:.3})  target: {target}  base: {:.4}",
                report.base_value
            );
            for (g, &c) in report.groups.iter().zip(&colors) {
                if c.intensity == 0.0 {
                    out.push_str(&g.text);
                } else {
                    let (r, gr, b) = rgb(c);
                    let _ = write!(out, "\x1b[38;2;0;0;0;48;2;{r};{gr};{b}m{}\x1b[0m", g.text);
                }
                out.push(' ');
            }
            if out.ends_with(' ') {
                out.pop();
            }
            out.push('\n');
        }
        ReportFormat::Html => {
            out.push_str("<div class=\"attribution\">\n");
            let _ = writeln!(
                out,
                "<div class=\"header\"><span class=\"prediction\">{}</span> <span class=\"probability\">{prob:.3}</span> <span class=\"target\">{}</span></div>",
                escape_html(&predicted),
                escape_html(&target)
            );
            out.push_str("<p class=\"groups\">");
            for (i, (g, &c)) in report.groups.iter().zip(&colors).enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let (r, gr, b) = rgb(c);
                let class = if c.intensity == 0.0 {
                    "neutral"
                } else if c.positive {
                    "positive"
                } else {
                    "negative"
                };
                let _ = write!(
                    out,
                    "<span class=\"{class}\" style=\"background-color: rgb({r}, {gr}, {b})\" title=\"{:.6}\">{}</span>",
                    report.phi[i],
                    escape_html(&g.text)
                );
            }
            out.push_str("</p>\n</div>\n");
        }
    }
    out
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Signed Σφ over the main-paragraph groups divided by signed Σφ over the context groups.
///
/// Spans are ranges of group indices. Returns [`RATIO_SENTINEL`] when the
/// context sum is below 1e-9 in magnitude.
pub fn context_contribution_ratio(
    report: &AttributionReport,
    main_span: Range<usize>,
    context_spans: &[Range<usize>],
) -> f64 {
    let sum = |r: Range<usize>| -> f64 { report.phi[r].iter().sum() };
    let main = sum(main_span);
    let context: f64 = context_spans.iter().cloned().map(sum).sum();
    if context.abs() < RATIO_EPS {
        RATIO_SENTINEL
    } else {
        main / context
    }
}
