//! Deterministic artifact emission: report.json with a run manifest,
//! CSV field dumps, and JSONL trajectories.

use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub enum Outcome {
    Success,
    Finding(String),
}

/// Manifest recorded in every report: identical manifests must produce
/// bit-identical artifacts.
pub fn manifest(command: &str, config: &serde_json::Value, tol: f64) -> serde_json::Value {
    let canonical = config.to_string();
    let mut hasher = Sha256::new();
    hasher.update(command.as_bytes());
    hasher.update(canonical.as_bytes());
    let hash = hex_string(&hasher.finalize());
    serde_json::json!({
        "command": command,
        "config_hash": hash,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "tolerances": { "tol": tol },
        "config": config,
    })
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct OutDir {
    root: Option<PathBuf>,
}

impl OutDir {
    pub fn new(root: Option<&Path>) -> std::io::Result<Self> {
        if let Some(root) = root {
            std::fs::create_dir_all(root.join("fields"))?;
            Ok(OutDir { root: Some(root.to_path_buf()) })
        } else {
            Ok(OutDir { root: None })
        }
    }

    /// Write report.json (and echo it to stdout).
    pub fn report(&self, value: &serde_json::Value) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(value).expect("serializable report");
        println!("{text}");
        if let Some(root) = &self.root {
            std::fs::write(root.join("report.json"), text + "\n")?;
        }
        Ok(())
    }

    /// Write a CSV under fields/.
    pub fn csv(&self, name: &str, header: &str, rows: &[Vec<f64>]) -> std::io::Result<()> {
        let Some(root) = &self.root else { return Ok(()) };
        let mut f = std::fs::File::create(root.join("fields").join(name))?;
        writeln!(f, "{header}")?;
        for row in rows {
            let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(f, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Write trajectory.jsonl, one serialized state summary per line.
    pub fn jsonl<T: serde::Serialize>(&self, name: &str, items: &[T]) -> std::io::Result<()> {
        let Some(root) = &self.root else { return Ok(()) };
        let mut f = std::fs::File::create(root.join(name))?;
        for item in items {
            writeln!(f, "{}", serde_json::to_string(item).expect("serializable"))?;
        }
        Ok(())
    }
}
