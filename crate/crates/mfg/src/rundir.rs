//! Run directories, tabular output and the manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// A fresh directory for one run. An existing path is never reused: the
/// first free `path-1`, `path-2`, ... is taken instead.
#[derive(Debug)]
pub struct RunDir {
    path: PathBuf,
    written: Vec<String>,
}

impl RunDir {
    pub fn create(requested: &Path) -> anyhow::Result<Self> {
        if let Some(parent) = requested.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).with_context(|| format!("cannot create {}", parent.display()))?;
        }
        let mut candidate = requested.to_path_buf();
        let mut k = 0;
        loop {
            match fs::create_dir(&candidate) {
                Ok(()) => break,
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    k += 1;
                    let mut name = requested.as_os_str().to_owned();
                    name.push(format!("-{k}"));
                    candidate = PathBuf::from(name);
                }
                Err(e) => return Err(e).with_context(|| format!("cannot create {}", candidate.display())),
            }
        }
        Ok(RunDir {
            path: candidate,
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.path.join(name);
        fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    pub fn write_json_compact<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut bytes = serde_json::to_vec(value)?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    pub fn write_csv(&mut self, name: &str, table: &Table) -> anyhow::Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&table.header)?;
        for row in &table.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
        self.write_bytes(name, &bytes)
    }

    pub fn write_lines(&mut self, name: &str, lines: &[String]) -> anyhow::Result<()> {
        let mut out = Vec::new();
        for l in lines {
            writeln!(out, "{l}")?;
        }
        self.write_bytes(name, &out)
    }
}

/// Headered rows of already formatted cells.
#[derive(Clone, Debug, Default)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Table {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Shortest round-trip formatting, so equal values always print equally.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config_path: String,
    pub config_sha256: String,
    /// The parsed configuration, so the run can be repeated from this file.
    pub config: serde_json::Value,
    pub master_seed: u64,
    pub seed_overridden: bool,
    pub derived_seeds: Vec<(String, u64)>,
    pub threads: usize,
    pub started_unix_seconds: f64,
    pub wall_clock_seconds: f64,
    pub exit_code: i32,
    pub outputs: Vec<String>,
}
