//! Report files: every subcommand writes one, validating against the
//! schema shipped in `schemas/report.schema.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportMeta {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub wall_clock_ms: f64,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub meta: ReportMeta,
    pub metrics: BTreeMap<String, Value>,
}

/// Accumulates a report while a subcommand runs.
pub struct ReportBuilder {
    command: String,
    config_hash: String,
    seed: u64,
    started: Instant,
    artifacts: BTreeMap<String, String>,
    metrics: BTreeMap<String, Value>,
}

impl ReportBuilder {
    pub fn new(command: &str, config_hash: &str, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            started: Instant::now(),
            artifacts: BTreeMap::new(),
            metrics: BTreeMap::new(),
        }
    }

    pub fn artifact(&mut self, name: &str, path: &Path) -> &mut Self {
        self.artifacts.insert(name.to_string(), path.display().to_string());
        self
    }

    pub fn metric(&mut self, name: &str, value: impl Serialize) -> &mut Self {
        self.metrics.insert(
            name.to_string(),
            serde_json::to_value(value).expect("metric is serializable"),
        );
        self
    }

    pub fn finish(self) -> ReportFile {
        ReportFile {
            meta: ReportMeta {
                command: self.command,
                config_hash: self.config_hash,
                seed: self.seed,
                version: env!("CARGO_PKG_VERSION").to_string(),
                wall_clock_ms: self.started.elapsed().as_secs_f64() * 1e3,
                artifacts: self.artifacts,
            },
            metrics: self.metrics,
        }
    }

    /// Finish and write `report_<command>.json` under `out`.
    pub fn write(self, out: &Path) -> Result<(PathBuf, ReportFile), CliError> {
        let report = self.finish();
        let path = out.join(format!("report_{}.json", report.meta.command));
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(&path, text)?;
        Ok((path, report))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_shape_and_write() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = ReportBuilder::new("train", "abc123", 7);
        b.metric("loss", 1.25);
        b.artifact("log", &dir.path().join("train_log.jsonl"));
        let (path, report) = b.write(dir.path()).unwrap();
        assert!(path.ends_with("report_train.json"));
        assert_eq!(report.meta.command, "train");
        assert_eq!(report.meta.seed, 7);
        let text = std::fs::read_to_string(&path).unwrap();
        let back: ReportFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.metrics["loss"], serde_json::json!(1.25));
    }
}
