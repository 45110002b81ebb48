//! Rendering of result tables and the run manifest written next to every
//! output file.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::ValueEnum;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Csv,
    Json,
}

/// A row of a CSV table with a fixed header.
pub trait CsvRecord {
    const HEADER: &'static str;
    fn csv_fields(&self) -> Vec<String>;
}

pub fn render<T: CsvRecord + Serialize>(rows: &[T], format: OutputFormat) -> Result<Vec<u8>, CliError> {
    match format {
        OutputFormat::Csv => {
            let mut out = Vec::new();
            writeln!(out, "{}", T::HEADER)?;
            for row in rows {
                writeln!(out, "{}", row.csv_fields().join(","))?;
            }
            Ok(out)
        }
        OutputFormat::Json => {
            let mut out = serde_json::to_vec_pretty(rows).map_err(|e| CliError::Data(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

/// Shortest round-trip form; exponent notation for very small or large values.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Provenance record stored as `<output>.manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Identifies the column layout of the output, bumped on any change.
    pub schema: String,
    pub config: Value,
    pub config_sha256: String,
    pub inputs: Vec<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

/// Collects manifest fields while a command runs.
pub struct Run {
    command: &'static str,
    config: Value,
    inputs: Vec<String>,
    seed: Option<u64>,
    started: u128,
}

impl Run {
    pub fn start(command: &'static str, config: Value) -> Self {
        Self { command, config, inputs: Vec::new(), seed: None, started: now_ms() }
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.display().to_string());
        self
    }

    pub fn seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    pub fn manifest(&self, schema: &str) -> RunManifest {
        let canonical = serde_json::to_string(&self.config).unwrap_or_default();
        RunManifest {
            command: self.command.to_string(),
            schema: schema.to_string(),
            config: self.config.clone(),
            config_sha256: hex(&Sha256::digest(canonical.as_bytes())),
            inputs: self.inputs.clone(),
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix_ms: self.started,
            finished_unix_ms: now_ms(),
        }
    }

    /// Writes `body` to `path` with its manifest, or to stdout when no path
    /// is given.
    pub fn emit(&self, path: Option<&Path>, schema: &str, body: &[u8]) -> Result<(), CliError> {
        match path {
            Some(path) => {
                std::fs::write(path, body)?;
                self.write_manifest(path, schema)
            }
            None => {
                std::io::stdout().write_all(body)?;
                Ok(())
            }
        }
    }

    pub fn write_manifest(&self, path: &Path, schema: &str) -> Result<(), CliError> {
        let json = serde_json::to_vec_pretty(&self.manifest(schema)).map_err(|e| CliError::Data(e.to_string()))?;
        std::fs::write(manifest_path(path), json)?;
        Ok(())
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name: OsString = path.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn now_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Pair {
        x: f64,
        y: Option<f64>,
    }

    impl CsvRecord for Pair {
        const HEADER: &'static str = "x,y";
        fn csv_fields(&self) -> Vec<String> {
            vec![num(self.x), opt_num(self.y)]
        }
    }

    #[test]
    fn csv_and_json_rendering() {
        let rows = [Pair { x: 0.5, y: None }, Pair { x: 1e-9, y: Some(2.0) }];
        let csv = String::from_utf8(render(&rows, OutputFormat::Csv).unwrap()).unwrap();
        assert_eq!(csv, "x,y\n0.5,\n1e-9,2.0\n");
        let json: Value = serde_json::from_slice(&render(&rows, OutputFormat::Json).unwrap()).unwrap();
        assert_eq!(json[1]["y"], 2.0);
        assert!(json[0]["y"].is_null());
    }

    #[test]
    fn config_hash_is_stable() {
        let cfg = serde_json::json!({"b": 1, "a": [1, 2]});
        let a = Run::start("x", cfg.clone()).manifest("s");
        let b = Run::start("x", cfg).manifest("s");
        assert_eq!(a.config_sha256, b.config_sha256);
        assert_eq!(a.config_sha256.len(), 64);
        assert_eq!(manifest_path(Path::new("out/t.csv")), PathBuf::from("out/t.csv.manifest.json"));
    }
}
