//! Output files. Every file carries the artifact version, the format version
//! and the fully resolved configuration: JSON files in an envelope, CSV
//! files in leading `#` comment lines.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::Failure;

/// Bumped whenever a JSON schema or CSV header changes.
pub const FORMAT_VERSION: u32 = 1;
pub const ARTIFACT: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// One acceptance-tagged check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub criterion: u32,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(criterion: u32, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            criterion,
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub artifact: String,
    pub version: String,
    pub format_version: u32,
    pub command: String,
    /// The resolved configuration, as TOML.
    pub config: String,
    pub checks: Vec<Check>,
    pub result: T,
}

pub struct Writer {
    dir: PathBuf,
    command: &'static str,
    config: String,
    pub written: Vec<PathBuf>,
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Other(format!("cannot write {}: {e}", path.display()))
}

impl Writer {
    pub fn new(dir: &Path, command: &'static str, config: &ExperimentConfig) -> Result<Self, Failure> {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command,
            config: config.to_toml(),
            written: Vec::new(),
        })
    }

    pub fn json<T: Serialize>(&mut self, name: &str, checks: &[Check], result: &T) -> Result<(), Failure> {
        let env = Envelope {
            artifact: ARTIFACT.to_string(),
            version: VERSION.to_string(),
            format_version: FORMAT_VERSION,
            command: self.command.to_string(),
            config: self.config.clone(),
            checks: checks.to_vec(),
            result,
        };
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(&env).map_err(|e| io_failure(&path, e))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| io_failure(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    /// `body` is the CSV proper, header row first.
    pub fn csv(&mut self, name: &str, body: &[u8]) -> Result<(), Failure> {
        let mut out = format!(
            "# {ARTIFACT} {VERSION} format {FORMAT_VERSION} command {}\n",
            self.command
        );
        for line in self.config.lines() {
            out.push_str("# ");
            out.push_str(line);
            out.push('\n');
        }
        let mut bytes = out.into_bytes();
        bytes.extend_from_slice(body);
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_failure(&path, e))?;
        self.written.push(path);
        Ok(())
    }
}

/// Serializes `rows` as CSV with a header row.
pub fn csv_body<R: Serialize>(rows: &[R]) -> Result<Vec<u8>, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Failure::Other(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| Failure::Other(format!("csv: {e}")))
}
