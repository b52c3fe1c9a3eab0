//! Output directory bookkeeping: every file written is hashed and listed in
//! `manifest.json`; failures leave `error.json` instead.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Serialize)]
struct OutputRecord {
    file: String,
    sha256: String,
    bytes: usize,
}

pub struct Artifacts {
    dir: PathBuf,
    outputs: Vec<OutputRecord>,
    summary: serde_json::Map<String, Value>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        // A stale error record from an earlier run would contradict this one.
        let _ = fs::remove_file(dir.join("error.json"));
        Ok(Self { dir: dir.to_path_buf(), outputs: Vec::new(), summary: serde_json::Map::new() })
    }

    pub fn write(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, content).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.outputs.push(OutputRecord { file: name.into(), sha256: hex::encode(Sha256::digest(content)), bytes: content.len() });
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        self.write(name, &(text + "\n"))
    }

    /// Scalar results echoed into the manifest.
    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.summary.insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn finish(self, subcommand: &str, config: &RunConfig) -> Result<(), CliError> {
        let input_sha256 = match &config.input {
            Some(p) => Some(hex::encode(Sha256::digest(fs::read(p).map_err(|e| CliError::Io(e.to_string()))?))),
            None => None,
        };
        let manifest = json!({
            "tool": "gnmqsim",
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": subcommand,
            "config_hash": config.hash(),
            "seed": format!("{:#x}", config.seed),
            "input_sha256": input_sha256,
            "summary": self.summary,
            "outputs": self.outputs,
            "config": config,
        });
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))? + "\n";
        fs::write(&path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
    }
}

/// Best effort: the output directory itself may be the problem.
pub fn write_error_record(dir: &Path, subcommand: &str, error: &CliError) {
    let record = json!({
        "status": "error",
        "subcommand": subcommand,
        "kind": error.kind(),
        "exit_code": error.exit_code(),
        "message": error.to_string(),
    });
    if fs::create_dir_all(dir).is_ok() {
        let _ = fs::write(dir.join("error.json"), serde_json::to_string_pretty(&record).unwrap_or_default() + "\n");
    }
}

/// CSV with a header row; `rows` yields already-formatted fields.
pub fn csv<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let fields: Vec<String> = row.into_iter().collect();
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

/// Round-trip exact float formatting.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}
