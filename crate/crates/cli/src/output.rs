//! Result files and the run manifest.
//!
//! Report files are pure functions of config, corpus and seed; wall-clock
//! times live only in `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";

/// Output directory that remembers every file written through it.
pub struct OutDir {
    root: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(name.to_owned());
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    pub fn jsonl<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut text = String::new();
        for r in rows {
            text.push_str(&serde_json::to_string(r)?);
            text.push('\n');
        }
        self.put(name, text.as_bytes())
    }

    /// Header row, `,` separator, `.` decimals, LF line endings.
    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))?;
        self.put(name, &bytes)
    }

    pub fn text(&mut self, name: &str, body: &str) -> Result<()> {
        self.put(name, body.as_bytes())
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }
}

/// What one subcommand invocation did.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunEntry {
    pub config: RunConfig,
    pub corpus_digest: Option<String>,
    pub started_at: String,
    pub finished_at: String,
    pub scenarios: usize,
    pub failed: usize,
    pub files: Vec<String>,
}

/// `manifest.json`: one entry per subcommand, the latest run of each wins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub runs: BTreeMap<String, RunEntry>,
}

impl RunManifest {
    pub fn load_or_new(dir: &Path) -> Self {
        fs::read_to_string(dir.join(MANIFEST))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_else(|| RunManifest {
                tool_version: env!("CARGO_PKG_VERSION").to_owned(),
                runs: BTreeMap::new(),
            })
    }

    pub fn record(dir: &Path, command: &str, entry: RunEntry) -> Result<()> {
        let mut m = Self::load_or_new(dir);
        m.tool_version = env!("CARGO_PKG_VERSION").to_owned();
        m.runs.insert(command.to_owned(), entry);
        let mut text = serde_json::to_string_pretty(&m)?;
        text.push('\n');
        let path = dir.join(MANIFEST);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        name: &'static str,
        value: f64,
        missing: Option<f64>,
    }

    #[test]
    fn csv_is_lf_with_header_and_dot_decimals() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutDir::create(dir.path()).unwrap();
        out.csv(
            "t.csv",
            &[
                Row { name: "a", value: 0.5, missing: None },
                Row { name: "b,c", value: 1e-7, missing: Some(2.0) },
            ],
        )
        .unwrap();
        let text = fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert_eq!(text, "name,value,missing\na,0.5,\n\"b,c\",1e-7,2.0\n");
        assert_eq!(out.written(), ["t.csv"]);
    }

    #[test]
    fn manifest_keeps_other_commands() {
        let dir = tempfile::tempdir().unwrap();
        let entry = |n| RunEntry {
            config: RunConfig::default(),
            corpus_digest: None,
            started_at: now(),
            finished_at: now(),
            scenarios: n,
            failed: 0,
            files: vec![],
        };
        RunManifest::record(dir.path(), "probe", entry(1)).unwrap();
        RunManifest::record(dir.path(), "score-open", entry(2)).unwrap();
        RunManifest::record(dir.path(), "probe", entry(3)).unwrap();
        let m = RunManifest::load_or_new(dir.path());
        assert_eq!(m.runs.len(), 2);
        assert_eq!(m.runs["probe"].scenarios, 3);
    }
}
