use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use fimlab::variance::format_f64;
use fimlab::FimError;
use serde::{Deserialize, Serialize};

use crate::args::{Command, Format};
use crate::config::NetworkFile;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
    Bool(bool),
    Empty,
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_f64(*v),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            Cell::Int(v) => (*v).into(),
            Cell::Float(v) => serde_json::Number::from_f64(*v).map_or(serde_json::Value::Null, Into::into),
            Cell::Text(s) => s.clone().into(),
            Cell::Bool(b) => (*b).into(),
            Cell::Empty => serde_json::Value::Null,
        }
    }
}

/// Column-typed numeric output, rendered as CSV or as a JSON record array.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Table {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn check_finite(&self) -> CliResult<()> {
        let bad = self
            .rows
            .iter()
            .flatten()
            .any(|c| matches!(c, Cell::Float(v) if !v.is_finite()));
        if bad {
            return Err(FimError::NonFinite("output table").into());
        }
        Ok(())
    }

    /// RFC 4180: CRLF line ends, quoting only where needed.
    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv)).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn to_json(&self) -> serde_json::Value {
        self.rows
            .iter()
            .map(|row| {
                self.header
                    .iter()
                    .zip(row)
                    .map(|(h, c)| (h.to_string(), c.json()))
                    .collect::<serde_json::Map<_, _>>()
                    .into()
            })
            .collect::<Vec<serde_json::Value>>()
            .into()
    }
}

pub fn json_bytes(value: &serde_json::Value) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable");
    v.push(b'\n');
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub file: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Command,
    /// The network, inline, so a replay does not depend on the config path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    pub outputs: Vec<OutputEntry>,
    pub wall_clock_seconds: f64,
}

pub const MANIFEST: &str = "manifest.json";

impl Manifest {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::InvalidJson {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        serde_json::from_value(value).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Collects outputs in one directory; every write goes through a temporary
/// file and a rename.
pub struct OutputDir {
    dir: PathBuf,
    format: Format,
    written: Vec<OutputEntry>,
}

impl OutputDir {
    pub fn create(dir: &Path, format: Format) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            format,
            written: Vec::new(),
        })
    }

    fn write_atomic(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.{}.tmp", std::process::id()));
        let result = (|| {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &target)
        })();
        if let Err(e) = result {
            let _ = fs::remove_file(&tmp);
            return Err(CliError::io(target, e));
        }
        self.written.push(OutputEntry {
            file: name.to_string(),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }

    /// Writes `stem.csv` or `stem.json` per the selected format.
    pub fn table(&mut self, stem: &str, table: &Table) -> CliResult<()> {
        table.check_finite()?;
        let name = format!("{stem}.{}", self.format.extension());
        let bytes = match self.format {
            Format::Csv => table.to_csv(),
            Format::Json => json_bytes(&table.to_json()),
        };
        self.write_atomic(&name, &bytes)
    }

    pub fn json(&mut self, stem: &str, value: &serde_json::Value) -> CliResult<()> {
        self.write_atomic(&format!("{stem}.json"), &json_bytes(value))
    }

    /// Writes the manifest last and returns the list of outputs.
    pub fn finish(mut self, mut manifest: Manifest) -> CliResult<Vec<OutputEntry>> {
        manifest.outputs = self.written.clone();
        let value = serde_json::to_value(&manifest).expect("serializable");
        self.write_atomic(MANIFEST, &json_bytes(&value))?;
        Ok(manifest.outputs)
    }
}
