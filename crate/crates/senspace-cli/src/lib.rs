//! Batch driver: configuration, stages, manifest and summary.

pub mod config;
pub mod error;
pub mod report;
pub mod stages;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use config::RunConfig;
use error::{CliError, CliResult};
use report::Summary;
use stages::{run_stage, sha256_hex, Artifact};

/// Overrides the output directory of every run.
pub const OUT_ENV: &str = "SENSPACE_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub artifacts: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub versions: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
}

pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from(&cfg.output_dir),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Runs the configured stages in order, then writes the manifest and summary.
pub fn run_pipeline(cfg: &RunConfig, dir: &Path) -> CliResult<Summary> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let canonical = cfg.canonical();
    fs::write(dir.join("config.toml"), &canonical)?;
    let mut records = Vec::new();
    for stage in &cfg.pipeline {
        let artifacts = run_stage(stage, cfg, dir)?;
        records.push(StageRecord { name: stage.clone(), artifacts });
    }
    let mut versions = BTreeMap::new();
    versions.insert("senspace-cli".to_string(), env!("CARGO_PKG_VERSION").to_string());
    versions.insert("senspace".to_string(), senspace::VERSION.to_string());
    let manifest = Manifest { config_sha256: sha256_hex(canonical.as_bytes()), versions, stages: records };
    write_json(&dir.join("manifest.json"), &manifest)?;
    emit_report(dir)
}

/// Reads a run directory and writes `summary.json` from its stage outputs.
pub fn emit_report(dir: &Path) -> CliResult<Summary> {
    let text = fs::read_to_string(dir.join("manifest.json")).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Io(e.to_string()))?;
    let mut outputs = BTreeMap::new();
    for s in &manifest.stages {
        let path = dir.join(stages::json_name(&s.name));
        let text = fs::read_to_string(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Io(e.to_string()))?;
        outputs.insert(s.name.clone(), v);
    }
    let summary = report::evaluate(&outputs);
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
