//! Small helpers for the delimited-text files the toolkit reads and writes.
//!
//! Floats are rendered with Rust's shortest round-trip `Display`, so writing
//! and re-parsing reproduces the exact bit pattern.

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn read_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Comma-separated table with one header line.
pub(crate) struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub(crate) fn read_csv(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let text = read_file(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::parse(&origin, 1, "empty file, expected a header line"))?
        .split(',')
        .map(str::trim)
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<String> = line.split(',').map(str::trim).map(String::from).collect();
        if cells.len() != header.len() {
            return Err(Error::parse(
                &origin,
                idx + 2,
                format!("expected {} cells, got {}", header.len(), cells.len()),
            ));
        }
        rows.push(cells);
    }
    Ok(Table { header, rows })
}

pub(crate) fn write_csv<R>(path: impl AsRef<Path>, header: &[String], rows: R) -> Result<()>
where
    R: IntoIterator,
    R::Item: IntoIterator,
    <R::Item as IntoIterator>::Item: std::fmt::Display,
{
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let mut first = true;
        for cell in row {
            if !first {
                out.push(',');
            }
            out.push_str(&cell.to_string());
            first = false;
        }
        out.push('\n');
    }
    write_file(path, &out)
}

pub(crate) fn parse_f64(origin: &str, lineno: usize, field: &str, raw: &str) -> Result<f64> {
    raw.parse()
        .map_err(|_| Error::parse(origin, lineno, format!("field {field}: cannot parse {raw:?} as a number")))
}

pub(crate) fn parse_usize(origin: &str, lineno: usize, field: &str, raw: &str) -> Result<usize> {
    raw.parse()
        .map_err(|_| Error::parse(origin, lineno, format!("field {field}: cannot parse {raw:?} as an integer")))
}
