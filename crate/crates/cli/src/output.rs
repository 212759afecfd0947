//! Artifact writers: CSV tables, key-value reports and the run manifest.

use std::fmt::Display;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// A CSV table built in memory and written in one go.
pub struct Table {
    name: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self { name: name.to_string(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Formats a float with the shortest representation that round-trips.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Ordered `key = value` lines.
#[derive(Default)]
pub struct Report {
    lines: Vec<(String, String)>,
}

impl Report {
    pub fn put(&mut self, key: &str, value: impl Display) {
        self.lines.push((key.to_string(), value.to_string()));
    }

    pub fn put_num(&mut self, key: &str, value: f64) {
        self.put(key, num(value));
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn render(&self) -> String {
        self.lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Collects everything an experiment produces.
#[derive(Default)]
pub struct Artifacts {
    pub tables: Vec<Table>,
    pub report: Report,
}

impl Artifacts {
    pub fn table(&mut self, t: Table) {
        self.tables.push(t);
    }

    /// Writes the tables and the report, returning the file names.
    pub fn write(&self, dir: &Path) -> io::Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        let mut names = Vec::new();
        for t in &self.tables {
            let file = format!("{}.csv", t.name);
            let mut w = csv::Writer::from_path(dir.join(&file))?;
            w.write_record(&t.header)?;
            for row in &t.rows {
                w.write_record(row)?;
            }
            w.flush()?;
            names.push(file);
        }
        if !self.report.is_empty() {
            fs::write(dir.join("report.txt"), self.report.render())?;
            names.push("report.txt".into());
        }
        Ok(names)
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub toolkit: &'static str,
    pub version: &'static str,
    pub kind: Option<String>,
    pub seed: Option<u64>,
    pub threads: usize,
    pub status: &'static str,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_location: Option<String>,
    pub outputs: Vec<String>,
    /// Lossless echo of the parsed config; feeding the manifest back to
    /// `run` repeats the experiment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<toml::Table>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let text = toml::to_string(self).map_err(io::Error::other)?;
        let path = dir.join("manifest.toml");
        fs::write(&path, text)?;
        Ok(path)
    }
}
