//! Benchmark ensembles with their exact transition matrices and rewards.
//!
//! Five kernel-based environments are provided (circulant, restart, process
//! update, mentoring, maternal health) plus the sensor-monitoring environment
//! whose arms are built by [`crate::sensing`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{validate_kernel, ArmModel, ModelError, RewardTable, TransitionKernel};
use crate::sensing::SensingParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("category mix sums to {sum} but n_arms is {n_arms}")]
    MixMismatch { sum: usize, n_arms: usize },
    #[error("budget {budget} is invalid for {n_arms} arms")]
    InvalidBudget { budget: usize, n_arms: usize },
    #[error("environment needs at least one arm")]
    NoArms,
    #[error("dynamic switch is only defined for process_update, not {0}")]
    SwitchNotSupported(EnvKind),
    #[error("dynamic switch step must be positive")]
    InvalidSwitchStep,
    #[error("restart decay must lie in (0, 1), got {0}")]
    InvalidDecay(f64),
    #[error("{0} has no transition kernels")]
    NoKernels(EnvKind),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Circulant,
    Restart,
    ProcessUpdate,
    Mentoring,
    MaternalHealth,
    Sensing,
}

impl EnvKind {
    pub const ALL: [EnvKind; 6] = [
        EnvKind::Circulant,
        EnvKind::Restart,
        EnvKind::ProcessUpdate,
        EnvKind::Mentoring,
        EnvKind::MaternalHealth,
        EnvKind::Sensing,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Circulant => "circulant",
            EnvKind::Restart => "restart",
            EnvKind::ProcessUpdate => "process_update",
            EnvKind::Mentoring => "mentoring",
            EnvKind::MaternalHealth => "maternal_health",
            EnvKind::Sensing => "sensing",
        }
    }

    pub fn parse(name: &str) -> Option<EnvKind> {
        EnvKind::ALL.into_iter().find(|k| k.as_str() == name)
    }

    pub fn description(self) -> &'static str {
        match self {
            EnvKind::Circulant => "4-state circulant chain, active kernel is the transpose of the passive one",
            EnvKind::Restart => "5-state chain where the active action resets to state 0, reward decay^s when passive",
            EnvKind::ProcessUpdate => "5-state AoII freshness chain, three categories with distinct stay/advance rates",
            EnvKind::Mentoring => "10-state mentoring chain with reward sqrt(s/10)",
            EnvKind::MaternalHealth => "3-state engagement model (L, P, S) with three responsiveness categories",
            EnvKind::Sensing => "temperature sensors with edge-mined estimates, AoII state, lossy channel",
        }
    }

    /// Whether arms come in the A/B/C categories.
    pub fn is_categorical(self) -> bool {
        matches!(
            self,
            EnvKind::ProcessUpdate | EnvKind::MaternalHealth | EnvKind::Sensing
        )
    }

    /// Default `(n_arms, budget)` used by the CLI when none is given.
    pub fn default_size(self) -> (usize, usize) {
        match self {
            EnvKind::Circulant | EnvKind::Restart => (5, 1),
            EnvKind::ProcessUpdate => (12, 1),
            EnvKind::Mentoring => (100, 10),
            EnvKind::MaternalHealth => (5000, 1000),
            EnvKind::Sensing => (30, 3),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const RESTART_DECAY: f64 = 0.9;

fn default_restart_decay() -> f64 {
    RESTART_DECAY
}

/// Configuration of one benchmark environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: EnvKind,
    pub n_arms: usize,
    pub budget_m: usize,
    /// Arms per category label. Defaults to an even split over A/B/C (remainder
    /// to A) for categorical environments and `{"A": n_arms}` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_mix: Option<BTreeMap<String, usize>>,
    /// Step at which categories A and B exchange dynamics (process update only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic_switch_step: Option<u64>,
    #[serde(default = "default_restart_decay")]
    pub restart_decay: f64,
    #[serde(default)]
    pub sensing: SensingParams,
}

impl EnvSpec {
    pub fn new(name: EnvKind, n_arms: usize, budget_m: usize) -> Self {
        Self {
            name,
            n_arms,
            budget_m,
            category_mix: None,
            dynamic_switch_step: None,
            restart_decay: RESTART_DECAY,
            sensing: SensingParams::default(),
        }
    }

    pub fn with_mix(mut self, mix: BTreeMap<String, usize>) -> Self {
        self.category_mix = Some(mix);
        self
    }

    pub fn with_switch(mut self, step: u64) -> Self {
        self.dynamic_switch_step = Some(step);
        self
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.n_arms == 0 {
            return Err(EnvError::NoArms);
        }
        if self.budget_m == 0 || self.budget_m > self.n_arms {
            return Err(EnvError::InvalidBudget {
                budget: self.budget_m,
                n_arms: self.n_arms,
            });
        }
        let mix = self.resolved_mix();
        let sum: usize = mix.values().sum();
        if sum != self.n_arms {
            return Err(EnvError::MixMismatch {
                sum,
                n_arms: self.n_arms,
            });
        }
        if self.name.is_categorical() {
            if let Some(bad) = mix.keys().find(|k| !matches!(k.as_str(), "A" | "B" | "C")) {
                return Err(EnvError::UnknownCategory(bad.clone()));
            }
        }
        match self.dynamic_switch_step {
            Some(0) => return Err(EnvError::InvalidSwitchStep),
            Some(_) if self.name != EnvKind::ProcessUpdate => return Err(EnvError::SwitchNotSupported(self.name)),
            _ => {}
        }
        if self.name == EnvKind::Restart && !(self.restart_decay > 0.0 && self.restart_decay < 1.0) {
            return Err(EnvError::InvalidDecay(self.restart_decay));
        }
        Ok(())
    }

    pub fn resolved_mix(&self) -> BTreeMap<String, usize> {
        match &self.category_mix {
            Some(m) => m.clone(),
            None if self.name.is_categorical() => even_split(self.n_arms),
            None => BTreeMap::from([("A".to_string(), self.n_arms)]),
        }
    }

    /// Category label of every arm, in arm order.
    pub fn arm_categories(&self) -> Vec<String> {
        expand_mix(&self.resolved_mix())
    }

    /// Builds the arm models of a kernel-based environment.
    pub fn build_arms(&self) -> Result<Vec<ArmModel>, EnvError> {
        self.validate()?;
        let mix = self.resolved_mix();
        let arms = match self.name {
            EnvKind::Circulant => relabel(build_circulant(self.n_arms), &mix),
            EnvKind::Restart => relabel(build_restart(self.n_arms, self.restart_decay), &mix),
            EnvKind::Mentoring => relabel(build_mentoring(self.n_arms), &mix),
            EnvKind::ProcessUpdate => build_process_update(&mix)?,
            EnvKind::MaternalHealth => build_maternal_health(&mix)?,
            EnvKind::Sensing => return Err(EnvError::NoKernels(self.name)),
        };
        Ok(arms)
    }
}

/// One third per category, remainder to A.
pub fn even_split(n: usize) -> BTreeMap<String, usize> {
    let third = n / 3;
    BTreeMap::from([
        ("A".to_string(), n - 2 * third),
        ("B".to_string(), third),
        ("C".to_string(), third),
    ])
}

fn expand_mix(mix: &BTreeMap<String, usize>) -> Vec<String> {
    mix.iter()
        .flat_map(|(label, &count)| std::iter::repeat_n(label.clone(), count))
        .collect()
}

fn relabel(arms: Vec<ArmModel>, mix: &BTreeMap<String, usize>) -> Vec<ArmModel> {
    let labels = expand_mix(mix);
    arms.into_iter()
        .zip(labels)
        .map(|(arm, label)| {
            if arm.category() == label {
                arm
            } else {
                ArmModel::new(
                    arm.passive().clone(),
                    arm.active().clone(),
                    arm.rewards().clone(),
                    label,
                )
                .expect("relabelling keeps a valid arm")
            }
        })
        .collect()
}

fn kernel(rows: &[&[f64]]) -> TransitionKernel {
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
    validate_kernel(&rows).expect("built-in kernel is row-stochastic")
}

pub fn circulant_arm() -> ArmModel {
    let passive = kernel(&[
        &[0.5, 0.0, 0.0, 0.5],
        &[0.5, 0.5, 0.0, 0.0],
        &[0.0, 0.5, 0.5, 0.0],
        &[0.0, 0.0, 0.5, 0.5],
    ]);
    let active = passive.transpose().expect("circulant transpose is stochastic");
    let rewards = RewardTable::action_independent([-1.0, 0.0, 0.0, 1.0]).expect("finite");
    ArmModel::new(passive, active, rewards, "A").expect("consistent circulant arm")
}

/// `n` identical 4-state circulant arms.
pub fn build_circulant(n: usize) -> Vec<ArmModel> {
    vec![circulant_arm(); n]
}

pub fn restart_arm(decay: f64) -> ArmModel {
    let mut passive = vec![vec![0.0; 5]; 5];
    for (s, row) in passive.iter_mut().enumerate() {
        row[0] = 0.1;
        row[(s + 1).min(4)] += 0.9;
    }
    let active: Vec<Vec<f64>> = (0..5).map(|_| vec![1.0, 0.0, 0.0, 0.0, 0.0]).collect();
    let rewards = RewardTable::new((0..5).map(|s| [decay.powi(s), 0.0]).collect()).expect("finite");
    ArmModel::new(
        validate_kernel(&passive).expect("restart passive kernel"),
        validate_kernel(&active).expect("restart active kernel"),
        rewards,
        "A",
    )
    .expect("consistent restart arm")
}

/// `n` identical 5-state restart arms with passive reward `decay^s`.
pub fn build_restart(n: usize, decay: f64) -> Vec<ArmModel> {
    vec![restart_arm(decay); n]
}

/// Passive `(stay, advance)` probabilities of the process-update categories.
pub fn process_update_rates(category: &str) -> Result<(f64, f64), EnvError> {
    match category {
        "A" => Ok((0.6, 0.4)),
        "B" => Ok((0.9, 0.1)),
        "C" => Ok((0.5, 0.5)),
        other => Err(EnvError::UnknownCategory(other.to_string())),
    }
}

/// Active-action success probability shared by every process-update category.
pub const PROCESS_UPDATE_SUCCESS: f64 = 0.9;

fn process_update_kernels(category: &str) -> Result<(TransitionKernel, TransitionKernel), EnvError> {
    let (stay, advance) = process_update_rates(category)?;
    let mut passive = vec![vec![0.0; 5]; 5];
    for (s, row) in passive.iter_mut().enumerate().take(4) {
        row[s] = stay;
        row[s + 1] = advance;
    }
    passive[4][4] = 1.0;
    let mut active = vec![vec![0.0; 5]; 5];
    active[0][0] = 1.0;
    for (s, row) in active.iter_mut().enumerate().skip(1) {
        row[0] = PROCESS_UPDATE_SUCCESS;
        row[s] = 1.0 - PROCESS_UPDATE_SUCCESS;
    }
    Ok((validate_kernel(&passive)?, validate_kernel(&active)?))
}

pub fn process_update_arm(category: &str) -> Result<ArmModel, EnvError> {
    let (passive, active) = process_update_kernels(category)?;
    let rewards = RewardTable::action_independent((0..5).map(|s| -(s as f64)))?;
    Ok(ArmModel::new(passive, active, rewards, category)?)
}

/// Process-update arms, grouped by category in label order.
pub fn build_process_update(mix: &BTreeMap<String, usize>) -> Result<Vec<ArmModel>, EnvError> {
    let mut arms = Vec::new();
    for (label, &count) in mix {
        let arm = process_update_arm(label)?;
        arms.extend(std::iter::repeat_n(arm, count));
    }
    Ok(arms)
}

/// Exchanges the dynamics of categories A and B; C arms, order and labels
/// are untouched. Applying it twice restores the original kernels.
pub fn apply_dynamic_switch(arms: &[ArmModel]) -> Result<Vec<ArmModel>, EnvError> {
    let (pa, aa) = process_update_kernels("A")?;
    let (pb, ab) = process_update_kernels("B")?;
    arms.iter()
        .map(|arm| {
            if !matches!(arm.category(), "A" | "B") {
                return Ok(arm.clone());
            }
            if arm.passive() == &pa && arm.active() == &aa {
                Ok(arm.with_kernels(pb.clone(), ab.clone())?)
            } else if arm.passive() == &pb && arm.active() == &ab {
                Ok(arm.with_kernels(pa.clone(), aa.clone())?)
            } else {
                Ok(arm.clone())
            }
        })
        .collect()
}

pub fn mentoring_arm() -> ArmModel {
    let n = 10;
    let mut active = vec![vec![0.0; n]; n];
    let mut passive = vec![vec![0.0; n]; n];
    for s in 0..n {
        let down = s.saturating_sub(1);
        let up = (s + 1).min(n - 1);
        active[s][down] += 0.3;
        active[s][up] += 0.7;
        passive[s][down] += 0.7;
        passive[s][up] += 0.3;
    }
    let rewards = RewardTable::action_independent((0..n).map(|s| (s as f64 / 10.0).sqrt())).expect("finite");
    ArmModel::new(
        validate_kernel(&passive).expect("mentoring passive kernel"),
        validate_kernel(&active).expect("mentoring active kernel"),
        rewards,
        "A",
    )
    .expect("consistent mentoring arm")
}

/// `n` identical 10-state mentoring arms.
pub fn build_mentoring(n: usize) -> Vec<ArmModel> {
    vec![mentoring_arm(); n]
}

/// States are L = 0, P = 1, S = 2.
pub fn maternal_health_arm(category: &str) -> Result<ArmModel, EnvError> {
    let (passive, active): ([[f64; 3]; 3], [[f64; 3]; 3]) = match category {
        "A" => (
            [[0.8, 0.2, 0.0], [0.8, 0.2, 0.0], [0.0, 0.2, 0.8]],
            [[0.4, 0.3, 0.3], [0.0, 0.2, 0.8], [0.0, 0.2, 0.8]],
        ),
        "B" => (
            [[0.6, 0.4, 0.0], [0.6, 0.2, 0.2], [0.2, 0.2, 0.6]],
            [[0.6, 0.2, 0.2], [0.2, 0.4, 0.4], [0.1, 0.1, 0.8]],
        ),
        "C" => (
            [[0.6, 0.2, 0.2], [0.6, 0.2, 0.2], [0.3, 0.3, 0.4]],
            [[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]],
        ),
        other => return Err(EnvError::UnknownCategory(other.to_string())),
    };
    let to_rows = |m: [[f64; 3]; 3]| m.iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    Ok(ArmModel::new(
        validate_kernel(&to_rows(passive))?,
        validate_kernel(&to_rows(active))?,
        RewardTable::action_independent([0.0, 1.0, 2.0])?,
        category,
    )?)
}

pub fn build_maternal_health(mix: &BTreeMap<String, usize>) -> Result<Vec<ArmModel>, EnvError> {
    let mut arms = Vec::new();
    for (label, &count) in mix {
        let arm = maternal_health_arm(label)?;
        arms.extend(std::iter::repeat_n(arm, count));
    }
    Ok(arms)
}
