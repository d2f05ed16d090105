//! The structured-text network file format.
//!
//! ```text
//! format_version: 1
//!
//! [nodes]
//! # id  x  y  elevation  base_demand  pattern
//! 0 0 0 10 0 0
//! 1 100 0 9.5 1.2 0
//!
//! [pipes]
//! # id  from  to  length  diameter  roughness  status
//! 0 0 1 100 0.25 130 open
//!
//! [sources]
//! # node  head
//! 0 60
//! ```
//!
//! Fields are whitespace-separated; `#` starts a comment. Floats are written
//! with Rust's shortest round-trip formatting, so `load(serialize(net))`
//! reproduces every field exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{NodeRecord, PipeRecord, PipeStatus, SourceRecord, WaterNetwork};

pub const NETWORK_FORMAT_VERSION: u32 = 1;

/// Read and validate a network file.
pub fn load_network(path: impl AsRef<Path>) -> Result<WaterNetwork> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_network(&text, &path.display().to_string())
}

/// Parse network text. `origin` names the source in error messages.
pub fn parse_network(text: &str, origin: &str) -> Result<WaterNetwork> {
    #[derive(PartialEq)]
    enum Section {
        Preamble,
        Nodes,
        Pipes,
        Sources,
    }

    let mut section = Section::Preamble;
    let mut version: Option<u32> = None;
    let mut nodes = Vec::new();
    let mut pipes = Vec::new();
    let mut sources = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("format_version:") {
            let v: u32 = rest
                .trim()
                .parse()
                .map_err(|_| Error::parse(origin, lineno, "format_version must be an integer"))?;
            version = Some(v);
            continue;
        }
        match line {
            "[nodes]" => {
                section = Section::Nodes;
                continue;
            }
            "[pipes]" => {
                section = Section::Pipes;
                continue;
            }
            "[sources]" => {
                section = Section::Sources;
                continue;
            }
            _ => {}
        }
        if line.starts_with('[') {
            return Err(Error::parse(origin, lineno, format!("unknown section {line}")));
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match section {
            Section::Preamble => {
                return Err(Error::parse(
                    origin,
                    lineno,
                    "expected a section header before data",
                ));
            }
            Section::Nodes => {
                if fields.len() != 6 {
                    return Err(Error::parse(
                        origin,
                        lineno,
                        format!(
                            "node record needs 6 fields (id x y elevation base_demand pattern), got {}",
                            fields.len()
                        ),
                    ));
                }
                nodes.push(NodeRecord {
                    id: parse_field(origin, lineno, fields[0], "id")?,
                    coord: [
                        parse_field(origin, lineno, fields[1], "x")?,
                        parse_field(origin, lineno, fields[2], "y")?,
                    ],
                    elevation: parse_field(origin, lineno, fields[3], "elevation")?,
                    base_demand: parse_field(origin, lineno, fields[4], "base_demand")?,
                    demand_pattern_id: parse_field(origin, lineno, fields[5], "pattern")?,
                });
            }
            Section::Pipes => {
                if fields.len() != 7 {
                    return Err(Error::parse(
                        origin,
                        lineno,
                        format!(
                            "pipe record needs 7 fields (id from to length diameter roughness status), got {}",
                            fields.len()
                        ),
                    ));
                }
                let status = match fields[6] {
                    "open" => PipeStatus::Open,
                    "closed" => PipeStatus::Closed,
                    other => {
                        return Err(Error::parse(
                            origin,
                            lineno,
                            format!("field status: expected open|closed, got {other}"),
                        ));
                    }
                };
                pipes.push(PipeRecord {
                    id: parse_field(origin, lineno, fields[0], "id")?,
                    endpoints: (
                        parse_field(origin, lineno, fields[1], "from")?,
                        parse_field(origin, lineno, fields[2], "to")?,
                    ),
                    length: parse_field(origin, lineno, fields[3], "length")?,
                    diameter: parse_field(origin, lineno, fields[4], "diameter")?,
                    roughness: parse_field(origin, lineno, fields[5], "roughness")?,
                    status,
                });
            }
            Section::Sources => {
                if fields.len() != 2 {
                    return Err(Error::parse(
                        origin,
                        lineno,
                        format!("source record needs 2 fields (node head), got {}", fields.len()),
                    ));
                }
                sources.push(SourceRecord {
                    node: parse_field(origin, lineno, fields[0], "node")?,
                    head: parse_field(origin, lineno, fields[1], "head")?,
                });
            }
        }
    }

    match version {
        None => {
            return Err(Error::parse(
                origin,
                1,
                "missing format_version header",
            ))
        }
        Some(v) if v != NETWORK_FORMAT_VERSION => {
            return Err(Error::FormatVersion {
                found: v,
                expected: NETWORK_FORMAT_VERSION,
            })
        }
        Some(_) => {}
    }

    WaterNetwork::new(nodes, pipes, sources)
}

fn parse_field<T: std::str::FromStr>(
    origin: &str,
    lineno: usize,
    raw: &str,
    field: &str,
) -> Result<T> {
    raw.parse().map_err(|_| {
        Error::parse(
            origin,
            lineno,
            format!("field {field}: cannot parse {raw:?}"),
        )
    })
}

/// Render a network in the documented text format. Deterministic; floats use
/// shortest round-trip formatting.
pub fn serialize_network(net: &WaterNetwork) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "format_version: {NETWORK_FORMAT_VERSION}");
    let _ = writeln!(out);
    let _ = writeln!(out, "[nodes]");
    let _ = writeln!(out, "# id x y elevation base_demand pattern");
    for n in net.nodes() {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {}",
            n.id, n.coord[0], n.coord[1], n.elevation, n.base_demand, n.demand_pattern_id
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "[pipes]");
    let _ = writeln!(out, "# id from to length diameter roughness status");
    for p in net.pipes() {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {}",
            p.id,
            p.endpoints.0,
            p.endpoints.1,
            p.length,
            p.diameter,
            p.roughness,
            p.status.as_str()
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "[sources]");
    let _ = writeln!(out, "# node head");
    for s in net.sources() {
        let _ = writeln!(out, "{} {}", s.node, s.head);
    }
    out
}

/// Write a network file.
pub fn save_network(net: &WaterNetwork, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, serialize_network(net)).map_err(|e| Error::io(path, e))
}
