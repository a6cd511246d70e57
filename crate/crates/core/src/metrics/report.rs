use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{per_class_prf, ConfusionMatrix, Prf};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_SVG: &str = "confusion.svg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub p: Vec<f64>,
    pub r: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<u64>,
}

/// Item accounting: `evaluated + errored == total` always holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct ItemCounts {
    pub total: usize,
    pub evaluated: usize,
    pub errored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub classes: Vec<String>,
    pub matrix: Vec<Vec<u64>>,
    pub unmatched: Vec<u64>,
    pub per_class: PerClass,
    #[serde(rename = "macro")]
    pub macro_avg: Prf,
    pub weighted: Prf,
    pub items: ItemCounts,
}

impl EvalReport {
    pub fn new(cm: &ConfusionMatrix, accuracy: Option<f64>, items: ItemCounts) -> Self {
        let t = per_class_prf(cm);
        Self {
            accuracy,
            classes: cm.classes.clone(),
            matrix: cm.counts.clone(),
            unmatched: cm.unmatched.clone(),
            per_class: PerClass {
                p: t.precision,
                r: t.recall,
                f1: t.f1,
                support: t.support,
            },
            macro_avg: t.macro_avg,
            weighted: t.weighted_avg,
            items,
        }
    }

    pub fn confusion(&self) -> ConfusionMatrix {
        ConfusionMatrix {
            classes: self.classes.clone(),
            counts: self.matrix.clone(),
            unmatched: self.unmatched.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }
}

/// Plain-text rendering: confusion matrix then the per-class table.
pub fn render_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let w = report
        .classes
        .iter()
        .map(|c| c.chars().count())
        .chain([9])
        .max()
        .unwrap_or(9);
    if let Some(a) = report.accuracy {
        let _ = writeln!(out, "accuracy: {a:.4}");
    }
    let i = report.items;
    let _ = writeln!(
        out,
        "items: {} total, {} evaluated, {} errored",
        i.total, i.evaluated, i.errored
    );
    out.push('\n');
    let _ = write!(out, "{:w$}", "actual");
    for k in 0..report.classes.len() {
        let _ = write!(out, " {k:>6}");
    }
    let _ = writeln!(out, " {:>9}", "unmatched");
    for (k, c) in report.classes.iter().enumerate() {
        let _ = write!(out, "{c:w$}");
        for n in &report.matrix[k] {
            let _ = write!(out, " {n:>6}");
        }
        let _ = writeln!(out, " {:>9}", report.unmatched[k]);
    }
    out.push('\n');
    let _ = writeln!(
        out,
        "{:w$} {:>9} {:>9} {:>9} {:>7}",
        "class", "precision", "recall", "f1", "support"
    );
    let pc = &report.per_class;
    for (k, c) in report.classes.iter().enumerate() {
        let _ = writeln!(
            out,
            "{c:w$} {:>9.4} {:>9.4} {:>9.4} {:>7}",
            pc.p[k], pc.r[k], pc.f1[k], pc.support[k]
        );
    }
    for (name, v) in [("macro", report.macro_avg), ("weighted", report.weighted)] {
        let _ = writeln!(out, "{name:w$} {:>9.4} {:>9.4} {:>9.4}", v.p, v.r, v.f1);
    }
    out
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Heatmap of the confusion matrix with an extra unmatched column. Cell
/// shading is the count divided by the row total.
pub fn render_svg(report: &EvalReport) -> String {
    const CELL: usize = 40;
    const LABEL: usize = 140;
    let c = report.classes.len();
    let width = LABEL + CELL * (c + 1) + 10;
    let height = LABEL + CELL * c + 10;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    );
    for (k, name) in report.classes.iter().enumerate() {
        let name = xml_escape(name);
        let y = LABEL + k * CELL + CELL / 2 + 4;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{y}" text-anchor="end">{name}</text>"#,
            LABEL - 6
        );
        let x = LABEL + k * CELL + CELL / 2;
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{}" transform="rotate(-60 {x} {})">{name}</text>"#,
            LABEL - 6,
            LABEL - 6
        );
    }
    let ux = LABEL + c * CELL + CELL / 2;
    let _ = writeln!(
        out,
        r#"<text x="{ux}" y="{}" transform="rotate(-60 {ux} {})" font-style="italic">unmatched</text>"#,
        LABEL - 6,
        LABEL - 6
    );
    for (k, row) in report.matrix.iter().enumerate() {
        let total = row.iter().sum::<u64>() + report.unmatched[k];
        for (j, &n) in row.iter().chain([&report.unmatched[k]]).enumerate() {
            let shade = if total == 0 {
                0.0
            } else {
                n as f64 / total as f64
            };
            let level = 255 - (shade * 200.0).round() as u8;
            let (x, y) = (LABEL + j * CELL, LABEL + k * CELL);
            let _ = writeln!(
                out,
                r##"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({level},{level},255)" stroke="#999"/>"##
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="middle">{n}</text>"#,
                x + CELL / 2,
                y + CELL / 2 + 4
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Writes `report.json`, `report.txt` and `confusion.svg` into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(REPORT_JSON), report.to_json())?;
    std::fs::write(dir.join(REPORT_TEXT), render_text(report))?;
    std::fs::write(dir.join(REPORT_SVG), render_svg(report))
}

pub fn read_report(dir: &Path) -> io::Result<EvalReport> {
    let text = std::fs::read_to_string(dir.join(REPORT_JSON))?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
