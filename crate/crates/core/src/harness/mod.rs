//! Seeded experiment campaigns.
//!
//! Every (policy, run) cell gets a fresh environment built from the run's
//! seed, so all policies face common random numbers. Cells run in parallel
//! and are merged by key, which keeps outputs independent of scheduling.

mod output;
mod resources;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{build_environment, BuildError};
use crate::envs::{EnvError, EnvKind, EnvSpec};
use crate::model::{count_active, ModelError};
use crate::policies::{Observation, PolicyConfig, PolicyError, Transition};
use crate::rng::RngStream;

pub use output::{read_config_or_manifest, write_outputs, Manifest, OutputPaths};
pub use resources::{count_stored_values, measure_runtime_per_decision, ResourceReport, ResourceRow};

/// Policy `k` draws from stream `POLICY_STREAM_BASE + k` of the run's seed.
pub const POLICY_STREAM_BASE: u64 = 100;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("policy {policy}: {source}")]
    Policy { policy: String, source: PolicyError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn default_runs() -> usize {
    10
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

/// Default horizon per environment.
pub fn default_horizon(kind: EnvKind) -> u64 {
    match kind {
        EnvKind::MaternalHealth => 160,
        EnvKind::Sensing => 20_000,
        _ => 100_000,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub policies: Vec<PolicyConfig>,
    /// Steps per run; defaults by environment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed_base: u64,
    /// Switch category A and B dynamics at step `horizon / 2`.
    #[serde(default)]
    pub dynamic: bool,
    /// Moving-average width for plot overlays; not applied to the outputs.
    #[serde(default)]
    pub smoothing_window: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    /// Also write every run's final learner snapshot.
    #[serde(default)]
    pub write_snapshots: bool,
}

impl ExperimentConfig {
    pub fn new(env: EnvSpec, policies: Vec<PolicyConfig>, horizon: u64, runs: usize) -> Self {
        Self {
            env,
            policies,
            horizon: Some(horizon),
            runs,
            seed_base: 0,
            dynamic: false,
            smoothing_window: 0,
            output_dir: default_output_dir(),
            workers: None,
            write_snapshots: false,
        }
    }

    pub fn horizon(&self) -> u64 {
        self.horizon.unwrap_or_else(|| default_horizon(self.env.name))
    }

    pub fn seed_of_run(&self, run: usize) -> u64 {
        self.seed_base.wrapping_add(run as u64)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.runs).map(|r| self.seed_of_run(r)).collect()
    }

    /// Fills defaults and folds the `dynamic` flag into the environment.
    pub fn resolved(&self) -> Self {
        let mut cfg = self.clone();
        cfg.horizon = Some(self.horizon());
        if cfg.dynamic && cfg.env.dynamic_switch_step.is_none() {
            cfg.env.dynamic_switch_step = Some((cfg.horizon() / 2).max(1));
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::InvalidConfig(msg));
        if self.horizon() == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.policies.is_empty() {
            return bad("no policies configured".into());
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for p in &self.policies {
            if !names.insert(p.name()) {
                return bad(format!("duplicate policy name {:?}", p.name()));
            }
        }
        self.resolved().env.validate()?;
        Ok(())
    }
}

/// Outcome of one policy on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub policy: String,
    pub run: usize,
    pub seed: u64,
    /// Sum of arm rewards at each step.
    pub instantaneous: Vec<f64>,
    /// Running mean of `instantaneous`.
    pub cum_avg: Vec<f64>,
    pub polls: Vec<u64>,
    pub categories: Vec<String>,
    pub stored_values: usize,
    /// Wall-clock seconds spent in select and observe.
    pub decision_seconds: f64,
    pub decisions: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<serde_json::Value>,
}

impl RunRecord {
    pub fn final_average(&self) -> f64 {
        self.cum_avg.last().copied().unwrap_or(0.0)
    }

    /// Poll totals per category label.
    pub fn polls_by_category(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        for (c, &p) in self.categories.iter().zip(&self.polls) {
            *out.entry(c.clone()).or_insert(0) += p;
        }
        out
    }

    /// Mean of `instantaneous` over steps `from..=to` (1-based).
    pub fn window_average(&self, from: u64, to: u64) -> f64 {
        let slice = &self.instantaneous[(from - 1) as usize..to as usize];
        slice.iter().sum::<f64>() / slice.len() as f64
    }
}

/// Pointwise mean and sample standard deviation across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateSeries {
    pub policy: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub mean_polls: Vec<f64>,
}

impl AggregateSeries {
    pub fn final_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(0.0)
    }

    pub fn final_std(&self) -> f64 {
        self.std.last().copied().unwrap_or(0.0)
    }
}

/// Aggregates records of one policy. Panics on an empty slice.
pub fn average_over_runs(records: &[RunRecord]) -> AggregateSeries {
    let first = &records[0];
    let runs = records.len() as f64;
    let len = first.cum_avg.len();
    let mut mean = vec![0.0; len];
    let mut std = vec![0.0; len];
    for t in 0..len {
        let m = records.iter().map(|r| r.cum_avg[t]).sum::<f64>() / runs;
        mean[t] = m;
        if records.len() > 1 {
            let ss: f64 = records.iter().map(|r| (r.cum_avg[t] - m).powi(2)).sum();
            std[t] = (ss / (runs - 1.0)).sqrt();
        }
    }
    let mean_polls = (0..first.polls.len())
        .map(|i| records.iter().map(|r| r.polls[i] as f64).sum::<f64>() / runs)
        .collect();
    AggregateSeries {
        policy: first.policy.clone(),
        mean,
        std,
        mean_polls,
    }
}

/// Simulates one policy on one seed for the configured horizon.
pub fn run_cell(cfg: &ExperimentConfig, policy_index: usize, run: usize) -> Result<RunRecord> {
    let cfg = cfg.resolved();
    let policy = &cfg.policies[policy_index];
    let seed = cfg.seed_of_run(run);
    let horizon = cfg.horizon();
    let mut env = build_environment(&cfg.env, seed)?;
    let wrap = |source| HarnessError::Policy {
        policy: policy.name().to_string(),
        source,
    };
    let mut sched = policy.build(env.as_ref()).map_err(wrap)?;
    let mut rng = RngStream::with_stream(seed, POLICY_STREAM_BASE + policy_index as u64);

    let n = env.n_arms();
    let budget = env.budget();
    let mut polls = vec![0u64; n];
    let mut instantaneous = Vec::with_capacity(horizon as usize);
    let mut cum_avg = Vec::with_capacity(horizon as usize);
    let mut rewards = Vec::with_capacity(n);
    let mut total = 0.0;
    let mut busy = std::time::Duration::ZERO;

    for t in 1..=horizon {
        if env.begin_step(t)? {
            sched.on_dynamics_change(env.models()).map_err(wrap)?;
        }
        let prev = env.states().to_vec();
        let clock = std::time::Instant::now();
        let actions = sched.select(
            &Observation {
                t,
                states: &prev,
                delays: env.delays(),
                budget,
            },
            &mut rng,
        );
        busy += clock.elapsed();
        debug_assert_eq!(count_active(&actions), budget);
        env.step(&actions, &mut rewards)?;
        let clock = std::time::Instant::now();
        sched.observe(&Transition {
            t,
            states: &prev,
            actions: &actions,
            rewards: &rewards,
            next_states: env.states(),
        });
        busy += clock.elapsed();
        for (p, a) in polls.iter_mut().zip(&actions) {
            *p += a.is_active() as u64;
        }
        let r: f64 = rewards.iter().sum();
        total += r;
        instantaneous.push(r);
        cum_avg.push(total / t as f64);
    }
    Ok(RunRecord {
        policy: policy.name().to_string(),
        run,
        seed,
        instantaneous,
        cum_avg,
        polls,
        categories: env.categories(),
        stored_values: sched.stored_values(),
        decision_seconds: busy.as_secs_f64(),
        decisions: horizon,
        snapshot: cfg.write_snapshots.then(|| sched.snapshot()),
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    /// Ordered by policy, then run.
    pub records: Vec<RunRecord>,
    /// One per policy, in configuration order.
    pub aggregates: Vec<AggregateSeries>,
    pub resources: ResourceReport,
}

impl ExperimentResult {
    pub fn aggregate(&self, policy: &str) -> Option<&AggregateSeries> {
        self.aggregates.iter().find(|a| a.policy == policy)
    }

    pub fn records_of(&self, policy: &str) -> Vec<&RunRecord> {
        self.records.iter().filter(|r| r.policy == policy).collect()
    }

    /// Mean final cumulative average of a policy across runs.
    pub fn final_mean(&self, policy: &str) -> Option<f64> {
        self.aggregate(policy).map(AggregateSeries::final_mean)
    }
}

/// Runs every (policy, run) cell and aggregates.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let cells: Vec<(usize, usize)> = (0..cfg.policies.len())
        .flat_map(|p| (0..cfg.runs).map(move |r| (p, r)))
        .collect();
    let work = || -> Result<Vec<RunRecord>> { cells.par_iter().map(|&(p, r)| run_cell(&cfg, p, r)).collect() };
    let records = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| HarnessError::InvalidConfig(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    let aggregates: Vec<AggregateSeries> = records.chunks(cfg.runs).map(average_over_runs).collect();
    let resources = ResourceReport::from_records(&records);
    Ok(ExperimentResult {
        config: cfg,
        records,
        aggregates,
        resources,
    })
}
