use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::cli::Format;

/// Collects a command's outputs and writes them plus `manifest.json` to the output directory.
pub struct Run {
    dir: PathBuf,
    format: Format,
    command: &'static str,
    inputs: BTreeMap<String, String>,
    parameters: Value,
    results: Map<String, Value>,
    outputs: Vec<String>,
    warnings: Vec<String>,
}

impl Run {
    pub fn new(dir: &Path, format: Format, command: &'static str) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Run {
            dir: dir.to_path_buf(),
            format,
            command,
            inputs: BTreeMap::new(),
            parameters: Value::Null,
            results: Map::new(),
            outputs: Vec::new(),
            warnings: Vec::new(),
        })
    }

    pub fn input(&mut self, key: &str, path: &Path) {
        self.inputs
            .insert(key.to_string(), path.display().to_string());
    }

    pub fn parameters(&mut self, params: Value) {
        self.parameters = params;
    }

    pub fn result(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.results
            .insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        eprintln!("warning: {msg}");
        self.warnings.push(msg);
    }

    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        let mut f =
            fs::File::create(&path).with_context(|| format!("cannot write {}", path.display()))?;
        f.write_all(bytes)
            .with_context(|| format!("cannot write {}", path.display()))?;
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_bytes(name, text.as_bytes())
    }

    /// Writes flat records as `<stem>.csv` or `<stem>.json` depending on `--format`.
    pub fn write_table<T: Serialize>(&mut self, stem: &str, records: &[T]) -> Result<()> {
        let name = format!("{stem}.{}", self.format.extension());
        match self.format {
            Format::Json => self.write_json(&name, &records),
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                for r in records {
                    w.serialize(r)?;
                }
                let bytes = w
                    .into_inner()
                    .map_err(|e| anyhow::anyhow!("csv: {}", e.error()))?;
                self.write_bytes(&name, &bytes)
            }
        }
    }

    /// Writes whatever `fill` produces under `name`.
    pub fn write_with(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> Result<()>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        fill(&mut buf)?;
        self.write_bytes(name, &buf)
    }

    pub fn format(&self) -> Format {
        self.format
    }

    /// Writes `manifest.json` and prints the results block to stdout.
    pub fn finish(mut self) -> Result<()> {
        self.outputs.sort();
        let manifest = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "inputs": self.inputs,
            "parameters": self.parameters,
            "results": self.results,
            "outputs": self.outputs,
            "warnings": self.warnings,
        });
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.dir.join("manifest.json");
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        println!("{}", serde_json::to_string_pretty(&manifest["results"])?);
        Ok(())
    }
}
