//! Delimited-text and JSON-lines artifacts.
//!
//! Every table starts with one `#` line of `key=value` metadata, the first
//! pair being `schema=<version>`. Floats are written in shortest
//! round-trip form, so reading a file back reproduces the values exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::engine::Simulation;
use crate::error::{Error, Result};
use crate::model::Pulse;

use super::config::SCHEMA_VERSION;

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::config(path.display().to_string(), format!("{other:?}")),
    }
}

fn header_line(kind: &str, meta: &[(&str, String)]) -> String {
    let mut line = format!("# schema={SCHEMA_VERSION} kind={kind}");
    for (k, v) in meta {
        line.push_str(&format!(" {k}={v}"));
    }
    line
}

fn write_table(path: &Path, kind: &str, meta: &[(&str, String)], columns: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{}", header_line(kind, meta)).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(columns).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses the `# schema=… key=value` header of a table.
pub fn read_header(path: &Path) -> Result<BTreeMap<String, String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file).read_line(&mut first).map_err(|e| Error::io(path, e))?;
    let Some(rest) = first.trim_end().strip_prefix('#') else {
        return Err(Error::config(path.display().to_string(), "missing `# schema=` header line"));
    };
    let meta: BTreeMap<String, String> = rest
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    match meta.get("schema").map(|s| s.parse::<u32>()) {
        Some(Ok(v)) if v == SCHEMA_VERSION => Ok(meta),
        _ => Err(Error::config(
            path.display().to_string(),
            format!("unsupported or missing schema version, expected {SCHEMA_VERSION}"),
        )),
    }
}

/// Metadata stored alongside a pulse.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PulseMeta {
    pub controls: Vec<String>,
    pub pixel_width: f64,
    pub fidelity: Option<f64>,
}

/// Pixel amplitudes in long form: `control,index,t_start_ns,u_rad_per_ns`.
pub fn write_pulse(path: &Path, pulse: &Pulse, meta: &PulseMeta) -> Result<()> {
    let mut header = vec![
        ("units", "ns,rad/ns".to_string()),
        ("pixel_width_ns", meta.pixel_width.to_string()),
        ("controls", meta.controls.join(",")),
    ];
    if let Some(phi) = meta.fidelity {
        header.push(("fidelity", phi.to_string()));
    }
    let mut rows = Vec::new();
    for (k, row) in pulse.rows().iter().enumerate() {
        for (j, u) in row.iter().enumerate() {
            rows.push(vec![
                meta.controls[k].clone(),
                j.to_string(),
                (j as f64 * meta.pixel_width).to_string(),
                u.to_string(),
            ]);
        }
    }
    let columns = ["control", "index", "t_start_ns", "u_rad_per_ns"].map(String::from);
    write_table(path, "pulse", &header, &columns, &rows)
}

pub fn read_pulse(path: &Path) -> Result<(Pulse, PulseMeta)> {
    let header = read_header(path)?;
    let bad = |reason: String| Error::config(path.display().to_string(), reason);
    let controls: Vec<String> = header
        .get("controls")
        .map(|c| c.split(',').map(String::from).collect())
        .unwrap_or_default();
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); controls.len()];
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let field = |i: usize| record.get(i).ok_or_else(|| bad(format!("row {line}: missing column {i}")));
        let k = controls
            .iter()
            .position(|c| c == field(0).unwrap_or_default())
            .ok_or_else(|| bad(format!("row {line}: unknown control `{}`", field(0).unwrap_or_default())))?;
        let j: usize = field(1)?.parse().map_err(|_| bad(format!("row {line}: bad index")))?;
        let u: f64 = field(3)?.parse().map_err(|_| bad(format!("row {line}: bad amplitude")))?;
        if j != rows[k].len() {
            return Err(bad(format!("row {line}: indices of `{}` must run 0, 1, 2, …", controls[k])));
        }
        rows[k].push(u);
    }
    let meta = PulseMeta {
        controls,
        pixel_width: header.get("pixel_width_ns").and_then(|v| v.parse().ok()).unwrap_or(f64::NAN),
        fidelity: header.get("fidelity").and_then(|v| v.parse().ok()),
    };
    Ok((Pulse::from_rows(rows), meta))
}

/// Sub-pixel field samples `s[k][l]` at phase `psi`. Times are measured
/// from the start of the first free pixel, so padding samples have `t < 0`.
pub fn write_field(path: &Path, sim: &Simulation, pulse: &Pulse, psi: f64) -> Result<()> {
    let fields = sim.fields(pulse, psi)?;
    let window = sim.window();
    let offset = window.padding as f64 * window.grid.pixel_width;
    let header = [
        ("units", "ns,rad/ns".to_string()),
        ("psi", psi.to_string()),
        ("sub_width_ns", window.grid.sub_width().to_string()),
        ("padding_pixels", window.padding.to_string()),
    ];
    let mut columns = vec!["l".to_string(), "t_ns".to_string()];
    columns.extend(sim.problem().controls.iter().map(|c| format!("{}_rad_per_ns", c.name)));
    let rows: Vec<Vec<String>> = (0..window.sub_pixels())
        .map(|l| {
            let mut row = vec![l.to_string(), (window.sample_time(l) - offset).to_string()];
            row.extend(fields.iter().map(|f| f[l].to_string()));
            row
        })
        .collect();
    write_table(path, "field", &header, &columns, &rows)
}

/// One row of an error table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorRow {
    pub value: f64,
    /// Objective reached on the optimization grid.
    pub fidelity: f64,
    /// Mean fine-grid Φ over the report phases.
    pub fine_fidelity: f64,
    pub per_phase: Vec<f64>,
}

pub fn write_errors(path: &Path, axis: &str, refinement: &str, phases: &[f64], rows: &[ErrorRow]) -> Result<()> {
    let header = [
        ("axis", axis.to_string()),
        ("refinement", refinement.to_string()),
        (
            "phases",
            phases.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(","),
        ),
    ];
    let mut columns: Vec<String> = ["value", "fidelity", "infidelity", "fine_fidelity", "fine_infidelity"]
        .map(String::from)
        .to_vec();
    columns.extend((0..phases.len()).map(|i| format!("fine_fidelity_phase{i}")));
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.value.to_string(),
                r.fidelity.to_string(),
                (1.0 - r.fidelity).to_string(),
                r.fine_fidelity.to_string(),
                (1.0 - r.fine_fidelity).to_string(),
            ];
            row.extend(r.per_phase.iter().map(|p| p.to_string()));
            row
        })
        .collect();
    write_table(path, "errors", &header, &columns, &table)
}

/// Line-delimited JSON records.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = create(path)?;
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::io(path, e.into()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::io(path, e.into()))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}
