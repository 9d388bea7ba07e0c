//! Estimate tables, plot data and the versioned JSON report.
//!
//! JSON layout (`"schema": "pse-report/1"`):
//! `{"schema", "results": [{"algorithm", "omega", "alpha", "converged",
//! "iterations", "gradient_norm", "loglik", "penalty", "parameters": [{"name",
//! "estimate", "se", "ci_lo", "ci_hi"}], "beta"}]}`. Values that are not finite are
//! written as `null`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::montecarlo::McSummary;
use crate::error::{PseError, Result};
use crate::models::FitCurveRow;
use crate::pse::{EstimateResult, OmegaStep};

pub const REPORT_SCHEMA: &str = "pse-report/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = PseError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "text" | "text-table" | "table" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(PseError::Config(format!("unknown report format `{s}`"))),
        }
    }
}

/// One line of the CSV estimate table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub parameter: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub algorithm: String,
}

const CSV_HEADER: [&str; 6] = ["parameter", "estimate", "se", "ci_lo", "ci_hi", "algorithm"];

pub fn report_rows(results: &[EstimateResult]) -> Vec<ReportRow> {
    results
        .iter()
        .flat_map(|r| {
            r.theta_names.iter().enumerate().map(move |(i, name)| ReportRow {
                parameter: name.clone(),
                estimate: r.theta_hat[i],
                se: r.std_errors[i],
                ci_lo: r.conf_intervals[i].0,
                ci_hi: r.conf_intervals[i].1,
                algorithm: r.algorithm.name().to_string(),
            })
        })
        .collect()
}

fn csv_string(header: &[&str], rows: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let to_err = |e: csv::Error| PseError::Parse {
        line: 0,
        message: e.to_string(),
    };
    w.write_record(header).map_err(to_err)?;
    rows(&mut w).map_err(to_err)?;
    let bytes = w.into_inner().map_err(|e| PseError::io("<csv buffer>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn render_csv(results: &[EstimateResult]) -> Result<String> {
    csv_string(&CSV_HEADER, |w| {
        for row in report_rows(results) {
            w.serialize(row)?;
        }
        Ok(())
    })
}

pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize()
        .map(|r| {
            r.map_err(|e: csv::Error| PseError::Parse {
                line: e.position().map_or(0, |p| p.line() as usize),
                message: e.to_string(),
            })
        })
        .collect()
}

fn finite(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn result_json(r: &EstimateResult) -> Value {
    let params: Vec<Value> = r
        .theta_names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            json!({
                "name": name,
                "estimate": finite(r.theta_hat[i]),
                "se": finite(r.std_errors[i]),
                "ci_lo": finite(r.conf_intervals[i].0),
                "ci_hi": finite(r.conf_intervals[i].1),
            })
        })
        .collect();
    json!({
        "algorithm": r.algorithm.name(),
        "omega": r.omega.map_or(Value::Null, finite),
        "alpha": r.alpha,
        "converged": r.converged,
        "iterations": r.iterations,
        "gradient_norm": finite(r.gradient_norm),
        "loglik": finite(r.loglik),
        "penalty": finite(r.penalty_value),
        "parameters": params,
        "beta": r.beta_hat.iter().map(|&b| finite(b)).collect::<Vec<_>>(),
    })
}

pub fn render_json(results: &[EstimateResult]) -> String {
    let doc = json!({
        "schema": REPORT_SCHEMA,
        "results": results.iter().map(result_json).collect::<Vec<_>>(),
    });
    serde_json::to_string_pretty(&doc).expect("report JSON serializes") + "\n"
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        "-".to_string()
    }
}

pub fn render_text(results: &[EstimateResult]) -> String {
    let mut out = format!(
        "{:<10} {:<10} {:>14} {:>12} {:>14} {:>14}\n",
        "algorithm", "parameter", "estimate", "se", "ci_lo", "ci_hi"
    );
    for row in report_rows(results) {
        let _ = writeln!(
            out,
            "{:<10} {:<10} {:>14} {:>12} {:>14} {:>14}",
            row.algorithm,
            row.parameter,
            fmt_num(row.estimate),
            fmt_num(row.se),
            fmt_num(row.ci_lo),
            fmt_num(row.ci_hi)
        );
    }
    for r in results {
        if let Some(w) = r.omega {
            let _ = writeln!(out, "{}: omega = {w:e}, converged = {}", r.algorithm.name(), r.converged);
        }
    }
    out
}

pub fn render_report(results: &[EstimateResult], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Text => Ok(render_text(results)),
        ReportFormat::Csv => render_csv(results),
        ReportFormat::Json => Ok(render_json(results)),
    }
}

/// Writes `text` to `path`, or to standard output when `path` is `None`.
pub fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| PseError::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn emit_report(results: &[EstimateResult], format: ReportFormat, path: Option<&Path>) -> Result<()> {
    write_output(path, &render_report(results, format)?)
}

/// One row per step: `omega`, then estimate and interval bounds of every
/// parameter, then the overlap with the previous step.
pub fn render_omega_path_csv(steps: &[OmegaStep]) -> Result<String> {
    let names: Vec<String> = steps.first().map_or_else(Vec::new, |s| s.estimate.theta_names.clone());
    let mut header = vec!["omega".to_string()];
    for n in &names {
        header.push(n.clone());
        header.push(format!("{n}_ci_lo"));
        header.push(format!("{n}_ci_hi"));
    }
    header.push("overlap".to_string());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_string(&header_refs, |w| {
        for s in steps {
            let mut rec = vec![s.omega.to_string()];
            for i in 0..names.len() {
                rec.push(s.estimate.theta_hat[i].to_string());
                rec.push(s.estimate.conf_intervals[i].0.to_string());
                rec.push(s.estimate.conf_intervals[i].1.to_string());
            }
            rec.push(s.overlap.map_or_else(String::new, |o| o.to_string()));
            w.write_record(&rec)?;
        }
        Ok(())
    })
}

pub fn render_fit_curve_csv(rows: &[FitCurveRow]) -> Result<String> {
    csv_string(&["x", "p_w", "p_k", "psi_w", "psi_k"], |w| {
        for r in rows {
            w.serialize(r)?;
        }
        Ok(())
    })
}

/// Largest `|p_j - Psi_j|` over the rows of a fit curve.
pub fn max_best_response_gap(rows: &[FitCurveRow]) -> f64 {
    rows.iter()
        .map(|r| (r.p_w - r.psi_w).abs().max((r.p_k - r.psi_k).abs()))
        .fold(0.0, f64::max)
}

pub fn render_mc_text(summary: &McSummary) -> String {
    let mut out = format!(
        "{:<10} {:<10} {:>12} {:>12} {:>9} {:>9}\n",
        "estimator", "parameter", "mean", "se", "ok", "failed"
    );
    for e in &summary.estimators {
        for (i, name) in e.theta_names.iter().enumerate() {
            let _ = writeln!(
                out,
                "{:<10} {:<10} {:>12} {:>12} {:>9} {:>9}",
                e.algorithm.name(),
                name,
                fmt_num(e.mean[i]),
                fmt_num(e.se[i]),
                e.successes(),
                e.failures
            );
        }
    }
    out
}

pub fn render_mc_json(summary: &McSummary) -> Result<String> {
    let mut doc = serde_json::to_value(summary).map_err(|e| PseError::Config(e.to_string()))?;
    doc["schema"] = json!(REPORT_SCHEMA);
    Ok(serde_json::to_string_pretty(&doc).expect("summary JSON serializes") + "\n")
}
