use std::path::Path;
use std::process::Command;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance of one command invocation, written next to its artifacts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub git_describe: String,
    pub started: String,
    pub finished: Option<String>,
    /// `running`, `ok`, `diverged` or `failed`.
    pub status: String,
    /// Fully resolved configuration, defaults included.
    pub config: Value,
    /// Files written by the run, relative to its directory.
    pub artifacts: Vec<String>,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

impl RunManifest {
    pub fn start(command: &str, seed: u64, config: Value) -> Self {
        Self {
            command: command.into(),
            argv: std::env::args().collect(),
            seed,
            git_describe: git_describe(),
            started: now(),
            finished: None,
            status: "running".into(),
            config,
            artifacts: Vec::new(),
        }
    }

    pub fn add(&mut self, artifact: &str) {
        if !self.artifacts.iter().any(|a| a == artifact) {
            self.artifacts.push(artifact.into());
        }
    }

    pub fn finish(&mut self, status: &str) {
        self.status = status.into();
        self.finished = Some(now());
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    pub fn read(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
