//! Output directory handling, run manifests and exit-status plumbing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

pub const EXIT_VIOLATION: u8 = 2;
pub const EXIT_USAGE: u8 = 64;
pub const EXIT_INTERNAL: u8 = 70;

/// How a command finished when it did not fail outright.
#[derive(Debug, PartialEq)]
pub enum Status {
    Ok,
    /// A verdict came back negative; the reason is printed to stderr.
    Violation(String),
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Internal(String),
}

impl From<morseland::Error> for Failure {
    fn from(e: morseland::Error) -> Self {
        if e.is_usage() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

pub type CmdResult<T> = std::result::Result<T, Failure>;

/// One run: an output directory, the artifacts written into it, and the
/// resolved configuration echoed into `manifest.json`.
pub struct Run {
    dir: PathBuf,
    command: String,
    artifacts: Vec<String>,
    resolved: serde_json::Map<String, serde_json::Value>,
}

impl Run {
    pub fn new(dir: &Path, command: &str) -> CmdResult<Self> {
        fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            artifacts: Vec::new(),
            resolved: serde_json::Map::new(),
        })
    }

    /// Records a resolved input (e.g. the landscape after defaults).
    pub fn resolve<T: Serialize>(&mut self, key: &str, value: &T) -> CmdResult<()> {
        let v = serde_json::to_value(value).map_err(|e| Failure::Internal(format!("serialization: {e}")))?;
        self.resolved.insert(key.to_string(), v);
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> CmdResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(|e| Failure::Internal(format!("cannot write {}: {e}", path.display())))?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    /// Writes a canonical JSON report; the main report is echoed to stdout.
    pub fn write_report<T: Serialize>(&mut self, name: &str, value: &T, echo: bool) -> CmdResult<()> {
        let text = morseland::io::to_report_json(value)?;
        if echo {
            print!("{text}");
        }
        self.write_text(name, &text)
    }

    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> morseland::Result<()>) -> CmdResult<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        let text = String::from_utf8(buf).map_err(|e| Failure::Internal(e.to_string()))?;
        self.write_text(name, &text)
    }

    /// Writes `manifest.json`: command, full configuration, resolved
    /// inputs, artifact list and crate versions.
    pub fn finish<C: Serialize>(self, config: &C, status: &Status) -> CmdResult<()> {
        let config = serde_json::to_value(config).map_err(|e| Failure::Internal(format!("serialization: {e}")))?;
        let manifest = json!({
            "command": self.command,
            "config": config,
            "resolved": self.resolved,
            "artifacts": self.artifacts,
            "status": match status {
                Status::Ok => "ok".to_string(),
                Status::Violation(why) => format!("violation: {why}"),
            },
            "versions": {
                "morseland": morseland::VERSION,
                "morseland-cli": env!("CARGO_PKG_VERSION"),
            },
        });
        let text = morseland::io::to_report_json(&manifest)?;
        let path = self.dir.join("manifest.json");
        fs::write(&path, text).map_err(|e| Failure::Internal(format!("cannot write {}: {e}", path.display())))
    }
}
