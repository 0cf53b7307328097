//! Rendering of evaluation reports and sweep curves.
//!
//! Text tables put paradigms in columns and F1 x 100 (two decimals) in the
//! cells. CSV has one line per report row or curve point.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::builder::Paradigm;
use crate::error::{Error, Result};
use crate::eval::{EvalReport, SweepCurve};
use crate::io;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Text,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "text" | "table" | "text-table" => Ok(Format::Text),
            "csv" => Ok(Format::Csv),
            _ => Err(Error::Config(format!("unknown format {s:?}"))),
        }
    }
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Text => "txt",
            Format::Csv => "csv",
        }
    }
}

/// F1 as shown in tables: percentage with two decimals.
pub fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

fn fmt_k(k: f64) -> String {
    if k.fract() == 0.0 {
        format!("{k:.0}")
    } else {
        k.to_string()
    }
}

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: &[String], out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i < 3 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header, &mut out);
    let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    for r in rows {
        line(r, &mut out);
    }
    out
}

fn report_text(report: &EvalReport) -> String {
    // One line per (ratio, category, matcher), paradigms across.
    let mut lines: BTreeMap<(u64, usize, String, String), BTreeMap<Paradigm, String>> = BTreeMap::new();
    let mut first_seen: Vec<String> = Vec::new();
    for r in &report.rows {
        if !first_seen.contains(&r.category) {
            first_seen.push(r.category.clone());
        }
        let cat_order = first_seen.iter().position(|c| c == &r.category).unwrap();
        let cell = format!("{}{}", pct(r.f1), if r.shortfall { "*" } else { "" });
        lines
            .entry((r.k_test.to_bits(), cat_order, r.category.clone(), r.matcher.to_string()))
            .or_default()
            .insert(r.paradigm, cell);
    }
    let mut header = vec!["Ratio".to_string(), "Category".to_string(), "Matcher".to_string()];
    header.extend(Paradigm::ALL.iter().map(|p| p.heading().to_string()));
    let rows: Vec<Vec<String>> = lines
        .into_iter()
        .map(|((k, _, cat, matcher), cells)| {
            let mut row = vec![format!("1:{}", fmt_k(f64::from_bits(k))), cat, matcher];
            row.extend(Paradigm::ALL.iter().map(|p| cells.get(p).cloned().unwrap_or_else(|| "-".into())));
            row
        })
        .collect();
    let mut out = format!("{} (F1 x 100, mean over seeds {:?})\n", report.title, report.seeds);
    out.push_str(&table(&header, &rows));
    if report.rows.iter().any(|r| r.shortfall) {
        out.push_str("* requested ratio not reached (pair universe exhausted)\n");
    }
    out
}

fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("paradigm,category,matcher,k_train,k_test,precision,recall,f1,tp,fp,fn,tn,degenerate,shortfall\n");
    for r in &report.rows {
        let c = r.confusion;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.paradigm, r.category, r.matcher, r.k_train, r.k_test, r.precision, r.recall, r.f1, c.tp, c.fp, c.fn_, c.tn, r.degenerate, r.shortfall
        );
    }
    out
}

fn curve_text(curve: &SweepCurve) -> String {
    let mut header = vec!["Ratio".to_string(), "Matcher".to_string(), "Axis".to_string()];
    header.extend(Paradigm::ALL.iter().map(|p| p.heading().to_string()));
    let axis = serde_json::to_value(curve.axis).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
    let rows: Vec<Vec<String>> = curve
        .ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let mut row = vec![format!("1:{}", fmt_k(k)), curve.matcher.to_string(), axis.clone()];
            for p in Paradigm::ALL {
                let cell = curve
                    .curve(p)
                    .and_then(|c| c.points.get(i))
                    .map(|pt| format!("{}{}", pct(pt.f1), if pt.shortfall { "*" } else { "" }))
                    .unwrap_or_else(|| "-".into());
                row.push(cell);
            }
            row
        })
        .collect();
    let mut out = format!("F1 x 100 by mismatched:matched ratio, mean over seeds {:?}\n", curve.seeds);
    out.push_str(&table(&header, &rows));
    if curve.curves.iter().flat_map(|c| &c.points).any(|p| p.shortfall) {
        out.push_str("* requested ratio not reached (pair universe exhausted)\n");
    }
    out
}

fn curve_csv(curve: &SweepCurve) -> String {
    let axis = serde_json::to_value(curve.axis).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
    let mut out = String::from("axis,matcher,paradigm,k,f1,shortfall\n");
    for c in &curve.curves {
        for p in &c.points {
            let _ = writeln!(out, "{axis},{},{},{},{},{}", curve.matcher, c.paradigm, p.k, p.f1, p.shortfall);
        }
    }
    out
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub fn render_report(report: &EvalReport, format: Format) -> Result<String> {
    match format {
        Format::Json => json(report),
        Format::Text => Ok(report_text(report)),
        Format::Csv => Ok(report_csv(report)),
    }
}

pub fn render_curve(curve: &SweepCurve, format: Format) -> Result<String> {
    match format {
        Format::Json => json(curve),
        Format::Text => Ok(curve_text(curve)),
        Format::Csv => Ok(curve_csv(curve)),
    }
}

/// Either kind of result document, as read back from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Document {
    Report(EvalReport),
    Curve(SweepCurve),
}

impl Document {
    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match self {
            Document::Report(r) => render_report(r, format),
            Document::Curve(c) => render_curve(c, format),
        }
    }
}

pub fn write_rendered(text: &str, path: &Path) -> Result<()> {
    io::atomic_write(path, text.as_bytes())
}
