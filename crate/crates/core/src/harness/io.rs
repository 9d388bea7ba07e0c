//! CSV ingestion and export for both data set types.
//!
//! Market data: header `walmart,kmart,spc` (any column order, extra columns
//! ignored), binary entry indicators and a real covariate. Monopoly data: header
//! `x,y`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{PseError, Result};
use crate::models::{EntryDataset, EntryRecord, MonopolyDataset, MonopolyRecord};

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| PseError::io(path, e))
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader)
}

fn column_indices(headers: &csv::StringRecord, names: &[&str]) -> Result<Vec<usize>> {
    let missing: Vec<&str> = names
        .iter()
        .copied()
        .filter(|n| !headers.iter().any(|h| h.eq_ignore_ascii_case(n)))
        .collect();
    if !missing.is_empty() {
        return Err(PseError::Schema(format!(
            "missing column(s) {}; found `{}`",
            missing.join(", "),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(names
        .iter()
        .map(|n| headers.iter().position(|h| h.eq_ignore_ascii_case(n)).expect("checked above"))
        .collect())
}

fn csv_error(e: csv::Error) -> PseError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    PseError::Parse {
        line,
        message: e.to_string(),
    }
}

fn parse_f64(field: &str, name: &str, line: usize) -> Result<f64> {
    field.parse::<f64>().map_err(|_| PseError::Parse {
        line,
        message: format!("{name} `{field}` is not a number"),
    })
}

fn parse_binary(field: &str, name: &str, line: usize) -> Result<u8> {
    let v = field.parse::<i64>().map_err(|_| PseError::Parse {
        line,
        message: format!("{name} `{field}` is not an integer"),
    })?;
    match v {
        0 | 1 => Ok(v as u8),
        _ => Err(PseError::Value {
            line,
            message: format!("{name} must be 0 or 1, got {v}"),
        }),
    }
}

/// Parses market data, keeping rows with `spc >= min_spc` when a threshold is given.
pub fn read_markets<R: Read>(reader: R, min_spc: Option<f64>) -> Result<EntryDataset> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let idx = column_indices(&headers, &["walmart", "kmart", "spc"])?;
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let d_w = parse_binary(&row[idx[0]], "walmart", line)?;
        let d_k = parse_binary(&row[idx[1]], "kmart", line)?;
        let x = parse_f64(&row[idx[2]], "spc", line)?;
        if !x.is_finite() {
            return Err(PseError::Value {
                line,
                message: format!("spc must be finite, got {x}"),
            });
        }
        if min_spc.is_none_or(|m| x >= m) {
            records.push(EntryRecord { d_w, d_k, x });
        }
    }
    EntryDataset::new(records)
}

pub fn load_markets_csv(path: &Path, min_spc: Option<f64>) -> Result<EntryDataset> {
    read_markets(open(path)?, min_spc)
}

pub fn read_monopoly<R: Read>(reader: R) -> Result<MonopolyDataset> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let idx = column_indices(&headers, &["x", "y"])?;
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let x = parse_f64(&row[idx[0]], "x", line)?;
        let y = parse_f64(&row[idx[1]], "y", line)?;
        if !(x > 0.0 && x.is_finite()) || !y.is_finite() {
            return Err(PseError::Value {
                line,
                message: format!("need finite y and x > 0, got x = {x}, y = {y}"),
            });
        }
        records.push(MonopolyRecord { x, y });
    }
    MonopolyDataset::new(records)
}

pub fn load_monopoly_csv(path: &Path) -> Result<MonopolyDataset> {
    read_monopoly(open(path)?)
}

pub fn write_markets<W: Write>(writer: W, data: &EntryDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in data.records() {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush().map_err(|e| PseError::io("<csv writer>", e))
}

pub fn write_monopoly<W: Write>(writer: W, data: &MonopolyDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in data.records() {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush().map_err(|e| PseError::io("<csv writer>", e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| PseError::io(path, e))
}

pub fn save_markets_csv(path: &Path, data: &EntryDataset) -> Result<()> {
    write_markets(create(path)?, data)
}

pub fn save_monopoly_csv(path: &Path, data: &MonopolyDataset) -> Result<()> {
    write_monopoly(create(path)?, data)
}
