//! Stage records and the run report.
//!
//! Every subcommand given `--run DIR` appends one JSON line to
//! `DIR/stages.jsonl`. `report` reads those lines back, checks that every
//! referenced file still exists, and writes `report.json`. The report hash
//! covers only content that a seeded rerun must reproduce: stage names,
//! config hashes, output file names and digests, the loss history and the
//! surface fits. Timings and absolute paths are left out.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use shellforge_core::features::SurfaceFit;
use shellforge_core::{Error, Result};

pub const STAGES_FILE: &str = "stages.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(shellforge_core::io::io_err(path))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub name: String,
    pub sha256: String,
}

impl Artifact {
    pub fn of(path: &Path) -> Result<Self> {
        let sha256 = file_sha256(path)?;
        let path = fs::canonicalize(path).map_err(shellforge_core::io::io_err(path))?;
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        Ok(Artifact { path, name, sha256 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub tool_version: String,
    pub config: Value,
    pub config_hash: String,
    pub outputs: Vec<Artifact>,
    pub seconds: f64,
}

impl StageRecord {
    pub fn new(stage: &str, config: &impl Serialize, outputs: &[PathBuf], seconds: f64) -> Result<Self> {
        let config = serde_json::to_value(config).map_err(|e| Error::invalid(e.to_string()))?;
        let config_hash = sha256_hex(config.to_string().as_bytes());
        Ok(StageRecord {
            stage: stage.into(),
            tool_version: TOOL_VERSION.into(),
            config,
            config_hash,
            outputs: outputs.iter().map(|p| Artifact::of(p)).collect::<Result<_>>()?,
            seconds,
        })
    }

    pub fn append(&self, run: &Path) -> Result<()> {
        fs::create_dir_all(run).map_err(shellforge_core::io::io_err(run))?;
        let path = run.join(STAGES_FILE);
        let mut line = serde_json::to_string(self).map_err(|e| Error::invalid(e.to_string()))?;
        line.push('\n');
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(shellforge_core::io::io_err(&path))
    }
}

pub fn read_stages(run: &Path) -> Result<Vec<StageRecord>> {
    let path = run.join(STAGES_FILE);
    let text = fs::read_to_string(&path).map_err(shellforge_core::io::io_err(&path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|source| Error::Json {
                path: path.clone(),
                source,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub config_hash: String,
    pub seconds: f64,
    pub outputs: Vec<Artifact>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub path: PathBuf,
    pub epochs: usize,
    pub initial_combined: f64,
    pub final_combined: f64,
    pub final_val_combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSummary {
    pub degree: usize,
    pub mean_radius: f64,
    pub residual_rms: f64,
    /// Σ_m c_nm² for n = 0..=degree.
    pub degree_power: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool_version: String,
    pub stages: Vec<StageSummary>,
    pub loss_history: Option<LossHistory>,
    pub surfaces: Vec<SurfaceSummary>,
    pub report_hash: String,
}

fn loss_history(stage: &StageRecord) -> Result<Option<LossHistory>> {
    let Some(log) = stage.outputs.iter().find(|a| a.name == crate::commands::TRAIN_LOG) else {
        return Ok(None);
    };
    let text = fs::read_to_string(&log.path).map_err(shellforge_core::io::io_err(&log.path))?;
    let rows: Vec<Value> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|source| Error::Json {
                path: log.path.clone(),
                source,
            })
        })
        .collect::<Result<_>>()?;
    let field = |row: Option<&Value>, key: &str| row.and_then(|r| r[key].as_f64()).unwrap_or(f64::NAN);
    Ok(Some(LossHistory {
        path: log.path.clone(),
        epochs: rows.len().saturating_sub(1),
        initial_combined: field(rows.first(), "combined"),
        final_combined: field(rows.last(), "combined"),
        final_val_combined: field(rows.last(), "val_combined"),
    }))
}

fn surfaces(stage: &StageRecord) -> Result<Vec<SurfaceSummary>> {
    let Some(fits) = stage.outputs.iter().find(|a| a.name == crate::commands::FITS_FILE) else {
        return Ok(Vec::new());
    };
    let fits: Vec<SurfaceFit> = shellforge_core::io::read_json(&fits.path)?;
    Ok(fits
        .iter()
        .map(|f| SurfaceSummary {
            degree: f.degree,
            mean_radius: f.mean_radius(),
            residual_rms: f.residual_rms,
            degree_power: (0..=f.degree).map(|n| f.degree_power(n)).collect(),
        })
        .collect())
}

/// Builds the report from the stage log, failing if any recorded output
/// has gone missing.
pub fn build_report(run: &Path) -> Result<RunReport> {
    let stages = read_stages(run)?;
    if stages.is_empty() {
        return Err(Error::invalid(format!("no stages recorded in {}", run.display())));
    }
    for s in &stages {
        for a in &s.outputs {
            if !a.path.exists() {
                return Err(Error::invalid(format!(
                    "stage {} output {} no longer exists",
                    s.stage,
                    a.path.display()
                )));
            }
        }
    }
    let mut history = None;
    let mut fits = Vec::new();
    for s in &stages {
        if let Some(h) = loss_history(s)? {
            history = Some(h);
        }
        let found = surfaces(s)?;
        if !found.is_empty() {
            fits = found;
        }
    }
    let deterministic = json!({
        "tool_version": TOOL_VERSION,
        "stages": stages.iter().map(|s| json!({
            "stage": s.stage,
            "config_hash": s.config_hash,
            "outputs": s.outputs.iter().map(|a| json!({"name": a.name, "sha256": a.sha256})).collect::<Vec<_>>(),
        })).collect::<Vec<_>>(),
        "loss_history": history.as_ref().map(|h| json!({
            "epochs": h.epochs,
            "initial_combined": h.initial_combined,
            "final_combined": h.final_combined,
            "final_val_combined": h.final_val_combined,
        })),
        "surfaces": fits,
    });
    Ok(RunReport {
        tool_version: TOOL_VERSION.into(),
        stages: stages
            .into_iter()
            .map(|s| StageSummary {
                stage: s.stage,
                config_hash: s.config_hash,
                seconds: s.seconds,
                outputs: s.outputs,
            })
            .collect(),
        loss_history: history,
        surfaces: fits,
        report_hash: sha256_hex(deterministic.to_string().as_bytes()),
    })
}
