//! Memory and latency accounting per scheduler.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result, RunRecord, POLICY_STREAM_BASE};
use crate::environment::build_environment;
use crate::envs::EnvSpec;
use crate::policies::{Observation, PolicyConfig, Transition};
use crate::rng::RngStream;

pub const BYTES_PER_VALUE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceRow {
    pub stored_values: usize,
    pub bytes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_ms_per_decision: Option<f64>,
    /// Where the timing was taken.
    pub measured_on: String,
}

impl ResourceRow {
    pub fn new(stored_values: usize, runtime_ms_per_decision: Option<f64>) -> Self {
        Self {
            stored_values,
            bytes: stored_values * BYTES_PER_VALUE,
            runtime_ms_per_decision,
            measured_on: machine_note(),
        }
    }
}

fn machine_note() -> String {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{}-{}, {} threads",
        std::env::consts::ARCH,
        std::env::consts::OS,
        threads
    )
}

/// Rows keyed by policy name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ResourceReport {
    pub policies: BTreeMap<String, ResourceRow>,
}

impl ResourceReport {
    pub fn from_records(records: &[RunRecord]) -> Self {
        let mut acc: BTreeMap<String, (usize, f64, u64)> = BTreeMap::new();
        for r in records {
            let e = acc.entry(r.policy.clone()).or_insert((r.stored_values, 0.0, 0));
            e.1 += r.decision_seconds;
            e.2 += r.decisions;
        }
        let policies = acc
            .into_iter()
            .map(|(name, (values, secs, n))| {
                let ms = (n > 0).then(|| 1000.0 * secs / n as f64);
                (name, ResourceRow::new(values, ms))
            })
            .collect();
        Self { policies }
    }
}

fn policy_error(policy: &PolicyConfig) -> impl Fn(crate::policies::PolicyError) -> HarnessError + '_ {
    move |source| HarnessError::Policy {
        policy: policy.name().to_string(),
        source,
    }
}

/// Persistent scalars of a freshly built scheduler on `env`.
///
/// Table sizes are fixed at construction for every scheduler here, so the
/// count does not change as learning proceeds.
pub fn count_stored_values(policy: &PolicyConfig, env: &EnvSpec) -> Result<ResourceRow> {
    let built = build_environment(env, 0)?;
    let sched = policy.build(built.as_ref()).map_err(policy_error(policy))?;
    Ok(ResourceRow::new(sched.stored_values(), None))
}

/// Mean wall-clock milliseconds of one select plus observe cycle, after
/// `warmup` untimed cycles. Environment stepping is excluded.
pub fn measure_runtime_per_decision(
    policy: &PolicyConfig,
    env: &EnvSpec,
    warmup: u64,
    samples: u64,
    seed: u64,
) -> Result<f64> {
    if samples == 0 {
        return Err(HarnessError::InvalidConfig("samples must be positive".into()));
    }
    let mut built = build_environment(env, seed)?;
    let mut sched = policy.build(built.as_ref()).map_err(policy_error(policy))?;
    let mut rng = RngStream::with_stream(seed, POLICY_STREAM_BASE);
    let budget = built.budget();
    let mut rewards = Vec::new();
    let mut busy = std::time::Duration::ZERO;
    for t in 1..=warmup + samples {
        let prev = built.states().to_vec();
        let clock = Instant::now();
        let actions = sched.select(
            &Observation {
                t,
                states: &prev,
                delays: built.delays(),
                budget,
            },
            &mut rng,
        );
        let select_time = clock.elapsed();
        built.step(&actions, &mut rewards)?;
        let clock = Instant::now();
        sched.observe(&Transition {
            t,
            states: &prev,
            actions: &actions,
            rewards: &rewards,
            next_states: built.states(),
        });
        if t > warmup {
            busy += select_time + clock.elapsed();
        }
    }
    Ok(1000.0 * busy.as_secs_f64() / samples as f64)
}
