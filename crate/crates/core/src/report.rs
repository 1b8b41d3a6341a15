//! Report emission: metrics CSV, console table, and per-case activation
//! reports (scores CSV, JSON summary, SVG line chart).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{MilError, Result};
use crate::metrics::EvalReport;
use crate::model::CasePrediction;

pub const METRICS_CSV_HEADER: &str = "name,support,sensitivity,f1,accuracy";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One row per class (sensitivity, F1), then `weighted_accuracy` and
/// `micro_accuracy` footer rows. Classes without cases leave sensitivity blank.
pub fn metrics_csv(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(METRICS_CSV_HEADER);
    out.push('\n');
    for c in &report.per_class {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},",
            csv_field(&c.name),
            c.support,
            fmt_opt(c.sensitivity),
            c.f1
        );
    }
    let total = report.confusion.total();
    let _ = writeln!(out, "weighted_accuracy,{total},,,{:.6}", report.weighted_accuracy);
    let _ = writeln!(out, "micro_accuracy,{total},,,{:.6}", report.micro_accuracy);
    out
}

pub fn write_metrics_csv(report: &EvalReport, path: &Path) -> Result<()> {
    fs::write(path, metrics_csv(report)).map_err(|e| MilError::io(path, e))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Fixed-width table for the terminal.
pub fn render_table(report: &EvalReport) -> String {
    let width = report
        .per_class
        .iter()
        .map(|c| c.name.chars().count())
        .chain([17])
        .max()
        .unwrap_or(17);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>7}  {:>8}  {:>8}", "class", "support", "Sen", "F1");
    let _ = writeln!(out, "{}", "-".repeat(width + 31));
    for c in &report.per_class {
        let sen = c.sensitivity.map(|s| format!("{s:.4}")).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(out, "{:<width$}  {:>7}  {:>8}  {:>8.4}", c.name, c.support, sen, c.f1);
    }
    let _ = writeln!(out, "{}", "-".repeat(width + 31));
    let _ = writeln!(out, "{:<width$}  {:>7}  {:>8.4}", "weighted accuracy", "", report.weighted_accuracy);
    let _ = writeln!(out, "{:<width$}  {:>7}  {:>8.4}", "micro accuracy", "", report.micro_accuracy);
    for note in &report.notes {
        let _ = writeln!(out, "note: {note}");
    }
    out
}

/// Everything `inspect` reports about one case.
#[derive(Clone, Debug, Serialize)]
pub struct CaseReport {
    pub case_id: String,
    pub label: String,
    pub predicted: String,
    pub probabilities: Vec<(String, f64)>,
    pub scores: Vec<f64>,
    pub kept: Vec<bool>,
    /// Final-stage threshold; absent for models without token selection.
    pub threshold: Option<f64>,
}

impl CaseReport {
    pub fn new(case_id: &str, label: usize, pred: &CasePrediction, class_names: &[String]) -> Result<Self> {
        if label >= class_names.len() || pred.probabilities.len() != class_names.len() {
            return Err(MilError::Input(format!(
                "case {case_id}: {} class names for {} probabilities (label {label})",
                class_names.len(),
                pred.probabilities.len()
            )));
        }
        Ok(CaseReport {
            case_id: case_id.to_string(),
            label: class_names[label].clone(),
            predicted: class_names[pred.predicted_class].clone(),
            probabilities: class_names.iter().cloned().zip(pred.probabilities.iter().copied()).collect(),
            scores: pred.per_instance_scores.clone(),
            kept: pred.kept_mask.clone(),
            threshold: pred.stage_thresholds.last().copied(),
        })
    }

    /// `instance,score,kept`, one row per instance in original order.
    pub fn scores_csv(&self) -> String {
        let mut out = String::from("instance,score,kept\n");
        for (i, (s, k)) in self.scores.iter().zip(&self.kept).enumerate() {
            let _ = writeln!(out, "{i},{s:.9},{}", u8::from(*k));
        }
        out
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Line chart of scores by instance index; kept instances are filled
    /// red, dropped ones hollow grey, the threshold is a dashed line.
    pub fn svg_chart(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 320.0;
        const LEFT: f64 = 56.0;
        const RIGHT: f64 = 16.0;
        const TOP: f64 = 36.0;
        const BOTTOM: f64 = 40.0;
        let n = self.scores.len();
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let x = |i: usize| {
            if n <= 1 {
                LEFT + pw / 2.0
            } else {
                LEFT + pw * i as f64 / (n - 1) as f64
            }
        };
        let y = |s: f64| TOP + ph * (1.0 - s.clamp(0.0, 1.0));

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{LEFT}" y="22" font-family="sans-serif" font-size="14">{} — label {}, predicted {}</text>"#,
            xml_escape(&self.case_id),
            xml_escape(&self.label),
            xml_escape(&self.predicted)
        );
        // Axes and y ticks.
        let _ = writeln!(
            svg,
            r#"<path d="M{LEFT} {TOP} L{LEFT} {b} L{r} {b}" fill="none" stroke="black"/>"#,
            b = TOP + ph,
            r = LEFT + pw
        );
        for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let _ = writeln!(
                svg,
                r#"<text x="{tx}" y="{ty:.2}" font-family="sans-serif" font-size="10" text-anchor="end">{tick:.2}</text>"#,
                tx = LEFT - 6.0,
                ty = y(tick) + 3.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{cx}" y="{ty}" font-family="sans-serif" font-size="11" text-anchor="middle">instance</text>"#,
            cx = LEFT + pw / 2.0,
            ty = H - 8.0
        );
        if let Some(t) = self.threshold {
            let _ = writeln!(
                svg,
                r##"<line x1="{LEFT}" y1="{ty:.2}" x2="{r}" y2="{ty:.2}" stroke="#555" stroke-dasharray="4 3"><title>threshold {t:.6}</title></line>"##,
                ty = y(t),
                r = LEFT + pw
            );
        }
        if n > 1 {
            let points: Vec<String> = self
                .scores
                .iter()
                .enumerate()
                .map(|(i, &s)| format!("{:.2},{:.2}", x(i), y(s)))
                .collect();
            let _ = writeln!(
                svg,
                r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="1.5"/>"##,
                points.join(" ")
            );
        }
        for (i, (&s, &k)) in self.scores.iter().zip(&self.kept).enumerate() {
            let (fill, stroke) = if k { ("#d62728", "#d62728") } else { ("white", "#888") };
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{fill}" stroke="{stroke}" class="{}"><title>instance {i}: {s:.6}</title></circle>"#,
                x(i),
                y(s),
                if k { "kept" } else { "dropped" }
            );
        }
        svg.push_str("</svg>\n");
        svg
    }

    /// Writes `<stem>_scores.csv`, `<stem>_summary.json` and `<stem>.svg`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| MilError::io(dir, e))?;
        let outputs = [
            (format!("{stem}_scores.csv"), self.scores_csv()),
            (format!("{stem}_summary.json"), self.summary_json()?),
            (format!("{stem}.svg"), self.svg_chart()),
        ];
        for (name, body) in outputs {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| MilError::io(&path, e))?;
        }
        Ok(())
    }
}

pub fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && !matches!(c, '\t' | '\n' | '\r') => {}
            c => out.push(c),
        }
    }
    out
}
