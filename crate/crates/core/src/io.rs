//! Output plumbing: CSV tables with 17 significant digits, JSON reports and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::solver::ValueField;

/// Scientific notation with 17 significant digits; round-trips every `f64`
/// (negative zero is written as zero).
pub fn fmt_float(x: f64) -> String {
    format!("{:.16e}", x + 0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => fmt_float(*v),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.header).map_err(io)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).map_err(io)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv()?)
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json(value)?)
}

/// Columns `x_index, x[, y], u_1 .. u_m` at snapshot `n`.
pub fn value_field_table(vf: &ValueField, n: usize) -> CsvTable {
    let dim = vf.grid.dim();
    let mut header = vec!["x_index".to_string(), "x".to_string()];
    if dim == 2 {
        header.push("y".into());
    }
    header.extend((1..=vf.m()).map(|k| format!("u_{k}")));
    let mut t = CsvTable::new(header);
    for node in 0..vf.grid.len() {
        let x = vf.grid.coords(node);
        let mut row: Vec<Cell> = vec![node.into(), x[0].into()];
        if dim == 2 {
            row.push(x[1].into());
        }
        row.extend(vf.values[n].iter().map(|u| Cell::from(u[node])));
        t.push(row);
    }
    t
}

/// Hex SHA-256 of the configuration bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

/// Everything needed to reproduce a run; timings are the only non-reproducible part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_hash: Option<String>,
    pub config_path: Option<String>,
    pub tool_version: String,
    pub parameters: serde_json::Value,
    pub timings: Vec<PhaseTiming>,
    pub warnings: Vec<String>,
    pub seeds: BTreeMap<String, u64>,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.to_string(),
            config_hash: None,
            config_path: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            parameters: serde_json::Value::Null,
            timings: Vec::new(),
            warnings: Vec::new(),
            seeds: BTreeMap::new(),
        }
    }

    pub fn with_config(mut self, path: &Path, bytes: &[u8]) -> Self {
        self.config_hash = Some(config_hash(bytes));
        self.config_path = Some(path.display().to_string());
        self
    }

    pub fn time(&mut self, phase: &str, seconds: f64) {
        self.timings.push(PhaseTiming {
            phase: phase.to_string(),
            seconds,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_with_17_digits() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            let s = fmt_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let mantissa = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17);
        }
    }

    #[test]
    fn csv_has_header_and_trailing_newline() {
        let mut t = CsvTable::new(["s", "phi_1"]);
        t.push(vec![0.0.into(), 1.0.into()]);
        let s = t.to_csv().unwrap();
        assert!(s.starts_with("s,phi_1\n"));
        assert!(s.ends_with('\n'));
        assert_eq!(s.lines().count(), 2);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(
            config_hash(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
