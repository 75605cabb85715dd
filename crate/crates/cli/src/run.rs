use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;

/// Timestamps and invocation details. Kept apart from the CSV outputs, which must not vary
/// between identical runs.
#[derive(Debug, Serialize)]
pub struct Metadata {
    pub command: String,
    pub args: Vec<String>,
    pub version: &'static str,
    pub started_unix: f64,
    pub finished_unix: Option<f64>,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

impl Metadata {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.into(),
            args: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            started_unix: now(),
            finished_unix: None,
        }
    }

    pub fn finish(mut self, dir: &Path) -> Result<()> {
        self.finished_unix = Some(now());
        write(dir.join("metadata.json"), serde_json::to_string_pretty(&self)?)
    }
}

pub fn write(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}
