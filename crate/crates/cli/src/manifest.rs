//! Per-run provenance written next to every command's outputs.

use std::path::Path;

use codedpix::io::{sha256_file, write_file};
use codedpix::{Error, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::RunConfig;

pub const MANIFEST_VERSION: u32 = 1;

pub struct Manifest {
    command: &'static str,
    config: Value,
    inputs: Map<String, Value>,
    extra: Map<String, Value>,
}

impl Manifest {
    pub fn new(command: &'static str, cfg: &RunConfig) -> Self {
        Manifest {
            command,
            config: serde_json::to_value(cfg).expect("config serializes"),
            inputs: Map::new(),
            extra: Map::new(),
        }
    }

    /// Record a file input with its hash, or a directory input with the hash
    /// of the named file inside it.
    pub fn input(&mut self, role: &str, path: &Path, hashed: Option<&str>) -> Result<()> {
        let target = match hashed {
            Some(name) => path.join(name),
            None => path.to_path_buf(),
        };
        let sha = sha256_file(&target)?;
        self.inputs.insert(
            role.into(),
            json!({ "path": path.display().to_string(), "sha256": sha }),
        );
        Ok(())
    }

    pub fn extra(&mut self, key: &str, value: impl Serialize) {
        self.extra
            .insert(key.into(), serde_json::to_value(value).expect("value serializes"));
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let doc = json!({
            "tool": "codedpix",
            "version": env!("CARGO_PKG_VERSION"),
            "manifest_version": MANIFEST_VERSION,
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "details": self.extra,
        });
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::format(&path, e.to_string()))?;
        write_file(&path, text.as_bytes())
    }
}

/// Read one field of a manifest's `details`, if present.
pub fn read_detail(dir: &Path, key: &str) -> Option<Value> {
    let text = std::fs::read_to_string(dir.join("manifest.json")).ok()?;
    let doc: Value = serde_json::from_str(&text).ok()?;
    doc.get("details")?.get(key).cloned()
}
