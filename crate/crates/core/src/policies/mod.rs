//! Schedulers: each one emits exactly M active arms per step and learns from
//! the transitions of every arm.

mod grid_search;
mod heuristics;
mod joint_q;
mod oracle;
mod two_timescale;
mod wiql;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::Environment;
use crate::model::{Action, ArmModel, StateIndex};
use crate::rng::RngStream;
use crate::whittle::{WhittleError, WhittleOptions};

pub use grid_search::{FuParams, GridSearchWiql};
pub use heuristics::{greedy_advantages, AoiGreedy, Greedy, RoundRobin};
pub use joint_q::{lexicographic_subsets, JointQ, JointQParams, DEFAULT_CAPACITY};
pub use oracle::OraclePolicy;
pub use two_timescale::{AbParams, TwoTimescaleWiql};
pub use wiql::{BiswasParams, WiqlBiswas, WiqlTables, WiqlUcb};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("shared table needs equal state counts, found {first} and {other}")]
    DimensionMismatch { first: usize, other: usize },
    #[error("joint table needs {needed} entries, cap is {cap}")]
    CapacityExceeded { needed: u128, cap: u128 },
    #[error("{policy} needs the true arm models, which this environment lacks")]
    NeedsModels { policy: &'static str },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error(transparent)]
    Whittle(#[from] WhittleError),
}

pub type Result<T> = std::result::Result<T, PolicyError>;

/// What a scheduler sees when choosing.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    /// 1-based step.
    pub t: u64,
    pub states: &'a [StateIndex],
    /// Steps since each arm's last successful activation.
    pub delays: &'a [u64],
    pub budget: usize,
}

/// One ensemble step as fed back to the scheduler.
#[derive(Debug, Clone, Copy)]
pub struct Transition<'a> {
    pub t: u64,
    pub states: &'a [StateIndex],
    pub actions: &'a [Action],
    pub rewards: &'a [f64],
    pub next_states: &'a [StateIndex],
}

pub trait Scheduler: Send {
    fn select(&mut self, obs: &Observation<'_>, rng: &mut RngStream) -> Vec<Action>;

    fn observe(&mut self, tr: &Transition<'_>);

    /// Informed schedulers refresh themselves when the true dynamics change.
    fn on_dynamics_change(&mut self, _models: Option<&[ArmModel]>) -> Result<()> {
        Ok(())
    }

    /// Persistent scalars the scheduler keeps.
    fn stored_values(&self) -> usize;

    /// Learned state for inspection.
    fn snapshot(&self) -> serde_json::Value {
        serde_json::Value::Null
    }
}

fn one() -> f64 {
    1.0
}

/// Scheduler selection plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    WiqlUcb {
        #[serde(default = "one")]
        gamma: f64,
    },
    WiqlBiswas(BiswasParams),
    WiqlAb(AbParams),
    WiqlFu(FuParams),
    JointQ(JointQParams),
    Greedy,
    RoundRobin,
    Aoi,
    Oracle {
        #[serde(default)]
        whittle: WhittleOptions,
    },
}

impl PolicyKind {
    pub fn default_name(&self) -> &'static str {
        match self {
            PolicyKind::WiqlUcb { .. } => "wiql_ucb",
            PolicyKind::WiqlBiswas(_) => "wiql_biswas",
            PolicyKind::WiqlAb(_) => "wiql_ab",
            PolicyKind::WiqlFu(_) => "wiql_fu",
            PolicyKind::JointQ(_) => "joint_q",
            PolicyKind::Greedy => "greedy",
            PolicyKind::RoundRobin => "round_robin",
            PolicyKind::Aoi => "aoi",
            PolicyKind::Oracle { .. } => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    #[serde(flatten)]
    pub kind: PolicyKind,
    /// Name in outputs; defaults to the kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl From<PolicyKind> for PolicyConfig {
    fn from(kind: PolicyKind) -> Self {
        Self { kind, label: None }
    }
}

impl PolicyConfig {
    pub fn wiql_ucb() -> Self {
        PolicyKind::WiqlUcb { gamma: 1.0 }.into()
    }

    pub fn name(&self) -> &str {
        self.label.as_deref().unwrap_or_else(|| self.kind.default_name())
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// A fresh scheduler sized for `env`.
    pub fn build(&self, env: &dyn Environment) -> Result<Box<dyn Scheduler>> {
        let counts = env.state_counts();
        let (n, m) = (env.n_arms(), env.budget());
        Ok(match &self.kind {
            PolicyKind::WiqlUcb { gamma } => Box::new(WiqlUcb::new(&counts, *gamma)?),
            PolicyKind::WiqlBiswas(p) => Box::new(WiqlBiswas::new(&counts, p.clone())?),
            PolicyKind::WiqlAb(p) => Box::new(TwoTimescaleWiql::new(&counts, p.clone())?),
            PolicyKind::WiqlFu(p) => Box::new(GridSearchWiql::new(&counts, p.clone())?),
            PolicyKind::JointQ(p) => Box::new(JointQ::new(&counts, m, p.clone())?),
            PolicyKind::Greedy => {
                let models = env.models().ok_or(PolicyError::NeedsModels { policy: "greedy" })?;
                Box::new(Greedy::new(models))
            }
            PolicyKind::RoundRobin => Box::new(RoundRobin::new(n)),
            PolicyKind::Aoi => Box::new(AoiGreedy),
            PolicyKind::Oracle { whittle } => {
                let models = env.models().ok_or(PolicyError::NeedsModels { policy: "oracle" })?;
                Box::new(OraclePolicy::new(models, *whittle)?)
            }
        })
    }
}

pub(crate) fn check_rate(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(PolicyError::InvalidParameter {
            name,
            reason: format!("{value} is outside (0, 1]"),
        })
    }
}

pub(crate) fn check_probability(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(PolicyError::InvalidParameter {
            name,
            reason: format!("{value} is outside [0, 1]"),
        })
    }
}

/// State count shared by every arm, for schedulers with one shared table.
pub(crate) fn common_state_count(counts: &[usize]) -> Result<usize> {
    let first = *counts.first().ok_or(PolicyError::InvalidParameter {
        name: "n_arms",
        reason: "no arms".into(),
    })?;
    match counts.iter().find(|&&c| c != first) {
        Some(&other) => Err(PolicyError::DimensionMismatch { first, other }),
        None => Ok(first),
    }
}
