//! CSV and JSON artifacts of an experiment.
//!
//! `rewards.csv`, `polls.csv` and `manifest.json` depend only on the
//! configuration, so reruns reproduce them byte for byte. `resources.json`
//! carries wall-clock timings and is expected to differ.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, ExperimentResult, HarnessError, Result};

pub const REWARDS_HEADER: [&str; 4] = ["step", "policy", "mean_cum_avg_reward", "std"];
pub const POLLS_HEADER: [&str; 4] = ["policy", "arm_id", "category", "polls"];

/// Resolved configuration plus the seeds it expands to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub policies: Vec<String>,
    pub version: String,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        let config = config.resolved();
        Self {
            seeds: config.seeds(),
            policies: config.policies.iter().map(|p| p.name().to_string()).collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub rewards: PathBuf,
    pub polls: PathBuf,
    pub resources: PathBuf,
    pub manifest: PathBuf,
    pub snapshots: Option<PathBuf>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Writes all artifacts into `dir`, creating it if needed.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<OutputPaths> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let paths = OutputPaths {
        rewards: dir.join("rewards.csv"),
        polls: dir.join("polls.csv"),
        resources: dir.join("resources.json"),
        manifest: dir.join("manifest.json"),
        snapshots: result.config.write_snapshots.then(|| dir.join("snapshots.json")),
    };

    let mut w = csv::Writer::from_path(&paths.rewards)?;
    w.write_record(REWARDS_HEADER)?;
    for agg in &result.aggregates {
        for (t, (m, s)) in agg.mean.iter().zip(&agg.std).enumerate() {
            w.write_record([(t + 1).to_string(), agg.policy.clone(), m.to_string(), s.to_string()])?;
        }
    }
    w.flush().map_err(io_err(&paths.rewards))?;

    let categories = result.records.first().map(|r| r.categories.clone()).unwrap_or_default();
    let mut w = csv::Writer::from_path(&paths.polls)?;
    w.write_record(POLLS_HEADER)?;
    for agg in &result.aggregates {
        for (i, (p, c)) in agg.mean_polls.iter().zip(&categories).enumerate() {
            w.write_record([agg.policy.clone(), i.to_string(), c.clone(), p.to_string()])?;
        }
    }
    w.flush().map_err(io_err(&paths.polls))?;

    write_json(&paths.resources, &result.resources)?;
    write_json(&paths.manifest, &Manifest::new(&result.config))?;
    if let Some(path) = &paths.snapshots {
        let snaps: Vec<_> = result
            .records
            .iter()
            .map(|r| serde_json::json!({ "policy": r.policy, "run": r.run, "snapshot": r.snapshot }))
            .collect();
        write_json(path, &snaps)?;
    }
    Ok(paths)
}

/// Reads either a bare configuration or a manifest written by a previous run.
pub fn read_config_or_manifest(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    if value.get("config").is_some() && value.get("seeds").is_some() {
        let manifest: Manifest = serde_json::from_value(value)?;
        Ok(manifest.config)
    } else {
        Ok(serde_json::from_value(value)?)
    }
}
