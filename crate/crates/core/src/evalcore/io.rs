//! CSV/JSON interchange for evaluation sets.
//!
//! Logits: header `l0,...,l{K-1},label`, one row per sample.
//! Features: header `f0,...,f{D-1}`, row-aligned with the logits.
//! Known posteriors: header `q0,...,q{K-1}`.
//! Head: JSON `{"weights": [[...]], "bias": [...]}`.
//!
//! Numbers are written in shortest round-trip form.

use super::{ClassifierHead, EvalSet, Features};
use crate::error::{FpError, Result};
use std::io::{Read, Write};

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v}")
}

fn parse_err(line: u64, message: impl Into<String>) -> FpError {
    FpError::Parse { line, message: message.into() }
}

fn csv_err(err: csv::Error) -> FpError {
    let line = err.position().map_or(0, |p| p.line());
    parse_err(line, err.to_string())
}

fn check_header(header: &csv::StringRecord, prefix: char, expected_len: usize) -> Result<()> {
    for (j, name) in header.iter().take(expected_len).enumerate() {
        if name.trim() != format!("{prefix}{j}") {
            return Err(parse_err(1, format!("expected column `{prefix}{j}`, found `{name}`")));
        }
    }
    Ok(())
}

fn parse_f64(field: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("column {column}: `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("column {column}: non-finite value `{field}`")));
    }
    Ok(v)
}

pub fn read_eval_csv<R: Read>(reader: R) -> Result<EvalSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.len() < 3 || header.get(header.len() - 1).map(str::trim) != Some("label") {
        return Err(parse_err(1, "header must be `l0,...,l{K-1},label` with K >= 2"));
    }
    let k = header.len() - 1;
    check_header(&header, 'l', k)?;

    let mut logits = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != k + 1 {
            return Err(parse_err(line, format!("expected {} fields, found {}", k + 1, record.len())));
        }
        for (j, field) in record.iter().take(k).enumerate() {
            logits.push(parse_f64(field, line, &format!("l{j}"))?);
        }
        let label_field = record[k].trim();
        let label: usize = label_field
            .parse()
            .map_err(|_| parse_err(line, format!("label `{label_field}` is not a class index")))?;
        if label >= k {
            return Err(parse_err(line, format!("label {label} is outside [0, {k})")));
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(parse_err(1, "no data rows"));
    }
    EvalSet::new(logits, k, labels)
}

/// Row-major matrix with header `{prefix}0,...,{prefix}{D-1}`; returns the
/// values and `D`.
fn read_matrix_csv<R: Read>(reader: R, prefix: char) -> Result<(Vec<f64>, usize)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let dim = header.len();
    if dim == 0 {
        return Err(parse_err(1, "header is empty"));
    }
    check_header(&header, prefix, dim)?;
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim {
            return Err(parse_err(line, format!("expected {dim} fields, found {}", record.len())));
        }
        for (j, field) in record.iter().enumerate() {
            values.push(parse_f64(field, line, &format!("{prefix}{j}"))?);
        }
    }
    Ok((values, dim))
}

pub fn read_features_csv<R: Read>(reader: R) -> Result<Features> {
    let (values, dim) = read_matrix_csv(reader, 'f')?;
    Ok(Features { values, dim })
}

/// Known class posteriors, header `q0,...,q{K-1}`; returns the row-major
/// values and `K`.
pub fn read_posterior_csv<R: Read>(reader: R) -> Result<(Vec<f64>, usize)> {
    read_matrix_csv(reader, 'q')
}

/// Writes a row-major matrix under the header `{prefix}0,...`.
pub fn write_matrix_csv<W: Write>(values: &[f64], dim: usize, prefix: char, mut out: W) -> Result<()> {
    let header: Vec<String> = (0..dim).map(|j| format!("{prefix}{j}")).collect();
    writeln!(out, "{}", header.join(","))?;
    for row in values.chunks_exact(dim) {
        let fields: Vec<String> = row.iter().map(|&v| fmt_num(v)).collect();
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn read_head_json<R: Read>(reader: R) -> Result<ClassifierHead> {
    serde_json::from_reader(reader).map_err(|e| parse_err(e.line() as u64, e.to_string()))
}

pub fn write_eval_csv<W: Write>(eval: &EvalSet, mut out: W) -> Result<()> {
    let k = eval.num_classes();
    let header: Vec<String> = (0..k).map(|j| format!("l{j}")).chain(["label".into()]).collect();
    writeln!(out, "{}", header.join(","))?;
    for (row, label) in eval.rows().zip(eval.labels()) {
        let fields: Vec<String> = row.iter().map(|&v| fmt_num(v)).collect();
        writeln!(out, "{},{label}", fields.join(","))?;
    }
    Ok(())
}
