use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sofar::Mat;

/// Reads a comma-separated numeric matrix. Every row must have the same
/// number of cells; NaN and infinite values are rejected.
pub fn read_matrix_csv(path: &Path, has_header: bool) -> Result<Mat> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    parse_matrix_csv(file, has_header).with_context(|| format!("while reading {}", path.display()))
}

pub fn parse_matrix_csv(source: impl Read, has_header: bool) -> Result<Mat> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut cols = None;
    let mut rows = 0;
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match cols {
            None => cols = Some(record.len()),
            Some(c) if c != record.len() => {
                bail!("line {line}: expected {c} columns, found {}", record.len())
            }
            Some(_) => {}
        }
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell
                .parse()
                .with_context(|| format!("line {line}, column {}: '{cell}' is not a number", j + 1))?;
            if !value.is_finite() {
                bail!("line {line}, column {}: non-finite value '{cell}'", j + 1);
            }
            data.push(value);
        }
        rows += 1;
    }
    let Some(cols) = cols else {
        bail!("no data rows");
    };
    Ok(Mat::new(rows, cols, data)?)
}

/// Writes a matrix with shortest round-trip decimal representations.
pub fn write_matrix_csv(path: &Path, m: &Mat) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    for i in 0..m.rows() {
        writer.write_record(m.row(i).iter().map(|v| v.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Pretty JSON to `path`, or to standard output when `path` is `None`.
pub fn emit_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display()))?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}
