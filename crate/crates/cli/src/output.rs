//! CSV tables and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;

use crate::params::Params;
use crate::CliError;

/// Bumped whenever a CSV layout changes.
pub const CSV_SCHEMA_VERSION: u32 = 1;

/// Full double precision: 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: impl Into<String>, header: &[&'static str]) -> Self {
        Table { name: name.into(), header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Collects outputs of one run and writes them with a single manifest.
pub struct RunOutput {
    dir: PathBuf,
    subcommand: &'static str,
    started_at: String,
    files: Vec<String>,
    schemas: BTreeMap<String, Vec<&'static str>>,
    pub results: serde_json::Map<String, Value>,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    subcommand: &'a str,
    code_version: &'a str,
    csv_schema_version: u32,
    params: &'a Params,
    seed: u64,
    started_at: &'a str,
    finished_at: String,
    output_dir: String,
    outputs: &'a [String],
    csv_schemas: &'a BTreeMap<String, Vec<&'static str>>,
    results: &'a serde_json::Map<String, Value>,
    warnings: &'a [String],
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunOutput {
    pub fn create(dir: &Path, subcommand: &'static str) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)?;
        Ok(RunOutput {
            dir: dir.to_path_buf(),
            subcommand,
            started_at: now(),
            files: Vec::new(),
            schemas: BTreeMap::new(),
            results: serde_json::Map::new(),
            warnings: Vec::new(),
        })
    }

    pub fn write_table(&mut self, table: &Table) -> Result<(), CliError> {
        let path = self.dir.join(&table.name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(&table.header)?;
        for r in &table.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        self.files.push(table.name.clone());
        self.schemas.insert(table.name.clone(), table.header.clone());
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value)?;
        std::fs::write(self.dir.join(name), text + "\n")?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn result(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.results.insert(key.to_string(), v);
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }

    pub fn finish(self, params: &Params) -> Result<PathBuf, CliError> {
        let m = Manifest {
            subcommand: self.subcommand,
            code_version: env!("CARGO_PKG_VERSION"),
            csv_schema_version: CSV_SCHEMA_VERSION,
            params,
            seed: params.seed,
            started_at: &self.started_at,
            finished_at: now(),
            output_dir: self.dir.display().to_string(),
            outputs: &self.files,
            csv_schemas: &self.schemas,
            results: &self.results,
            warnings: &self.warnings,
        };
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(self.dir)
    }
}
