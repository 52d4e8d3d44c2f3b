//! Deterministic writers for run artifacts. Floats go through the shortest
//! round-trip formatting, rows are emitted in a fixed order, and nothing
//! time-dependent is written, so equal configs give equal bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;

/// Sidecar written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
    pub config: RunConfig,
}

impl RunMetadata {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            config_sha256: config.sha256(),
            seed: config.seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join("metadata.json");
        let mut text = serde_json::to_string_pretty(self).expect("metadata serializes");
        text.push('\n');
        write_file(&path, &text)?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join("metadata.json");
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(path.clone(), e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))
    }
}

pub fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent.to_path_buf(), e))?;
        }
    }
    std::fs::write(path, content).map_err(|e| CliError::io(path.to_path_buf(), e))
}

/// Shortest representation that parses back to the same f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Header plus rows, RFC-style quoting, trailing newline.
pub fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "{}", header.join(","));
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        let line: Vec<String> = row.iter().map(|f| csv_field(f)).collect();
        let _ = writeln!(text, "{}", line.join(","));
    }
    text
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    write_file(path, &csv_text(header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_through_display() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 123456.789, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(1.0), "1");
        assert_eq!(fmt_opt(None), "");
    }

    #[test]
    fn csv_quotes_only_when_needed() {
        let text = csv_text(
            &["a", "b"],
            &[
                vec!["plain".into(), "with,comma".into()],
                vec!["with\"quote".into(), "fine".into()],
            ],
        );
        assert_eq!(text, "a,b\nplain,\"with,comma\"\n\"with\"\"quote\",fine\n");
    }

    #[test]
    fn metadata_round_trips() {
        let config = crate::config::RawConfig::default().resolve();
        let meta = RunMetadata::new("frontier", &config);
        let dir = tempfile::tempdir().unwrap();
        meta.write(dir.path()).unwrap();
        let back = RunMetadata::read(dir.path()).unwrap();
        assert_eq!(back, meta);
        assert_eq!(back.config_sha256, config.sha256());
        let missing = RunMetadata::read(&dir.path().join("nope"));
        assert_eq!(missing.unwrap_err().exit_code(), crate::error::EXIT_IO);
    }
}
