//! Per-arm MDP primitives and the coupled ensemble step.
//!
//! An arm is a finite MDP with two actions. Both actions carry their own
//! row-stochastic kernel, and every arm transitions every step whether it is
//! selected or not. Rewards are a function of the pre-transition state and the
//! action taken.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;

/// Maximum deviation of a kernel row sum from one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("kernel has no rows")]
    EmptyKernel,
    #[error("kernel is not square: {rows} rows but row {row} has {cols} entries")]
    NotSquare { rows: usize, row: usize, cols: usize },
    #[error("row {row} sums to {sum}, expected 1")]
    RowSum { row: usize, sum: f64 },
    #[error("negative entry at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFiniteEntry { row: usize, col: usize },
    #[error("passive kernel has {passive} states but active kernel has {active}")]
    KernelSizeMismatch { passive: usize, active: usize },
    #[error("reward table has {rows} rows, arm has {states} states")]
    RewardRows { rows: usize, states: usize },
    #[error("non-finite reward for state {state}")]
    NonFiniteReward { state: usize },
    #[error("arm declares {declared} states but its kernels have {actual}")]
    DeclaredStates { declared: usize, actual: usize },
    #[error("state {state} is out of range for arm {arm} with {states} states")]
    StateOutOfRange { arm: usize, state: usize, states: usize },
    #[error("budget {budget} is invalid for {arms} arms")]
    InvalidBudget { budget: usize, arms: usize },
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("{count} arms activated but the budget is exactly {budget}")]
    BudgetViolation { count: usize, budget: usize },
}

/// Index into an arm's state space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateIndex(pub usize);

impl StateIndex {
    #[inline]
    pub fn get(self) -> usize {
        self.0
    }
}

impl From<usize> for StateIndex {
    fn from(v: usize) -> Self {
        StateIndex(v)
    }
}

/// Binary scheduling decision for one arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    #[default]
    Passive,
    Active,
}

impl Action {
    #[inline]
    pub fn index(self) -> usize {
        match self {
            Action::Passive => 0,
            Action::Active => 1,
        }
    }

    #[inline]
    pub fn is_active(self) -> bool {
        matches!(self, Action::Active)
    }

    #[inline]
    pub fn from_active(active: bool) -> Self {
        if active {
            Action::Active
        } else {
            Action::Passive
        }
    }

    pub const BOTH: [Action; 2] = [Action::Passive, Action::Active];
}

/// Builds an action vector with exactly the given arms active.
pub fn actions_from_selection(n: usize, selected: &[usize]) -> Vec<Action> {
    let mut actions = vec![Action::Passive; n];
    for &i in selected {
        actions[i] = Action::Active;
    }
    actions
}

pub fn count_active(actions: &[Action]) -> usize {
    actions.iter().filter(|a| a.is_active()).count()
}

/// Row-stochastic square matrix, stored row-major alongside its row-wise
/// cumulative sums for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionKernel {
    n: usize,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

/// Checks a probability matrix and returns it as a kernel.
///
/// Rows whose sum is within [`ROW_SUM_TOLERANCE`] of one are renormalized;
/// anything further off is rejected.
pub fn validate_kernel(matrix: &[Vec<f64>]) -> Result<TransitionKernel, ModelError> {
    let n = matrix.len();
    if n == 0 {
        return Err(ModelError::EmptyKernel);
    }
    let mut probs = Vec::with_capacity(n * n);
    for (row, values) in matrix.iter().enumerate() {
        if values.len() != n {
            return Err(ModelError::NotSquare {
                rows: n,
                row,
                cols: values.len(),
            });
        }
        let mut sum = 0.0;
        for (col, &p) in values.iter().enumerate() {
            if !p.is_finite() {
                return Err(ModelError::NonFiniteEntry { row, col });
            }
            if p < 0.0 {
                return Err(ModelError::NegativeEntry { row, col });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(ModelError::RowSum { row, sum });
        }
        if sum == 1.0 {
            probs.extend_from_slice(values);
        } else {
            probs.extend(values.iter().map(|p| p / sum));
        }
    }
    Ok(TransitionKernel::from_validated(n, probs))
}

impl TransitionKernel {
    fn from_validated(n: usize, probs: Vec<f64>) -> Self {
        let mut cumulative = Vec::with_capacity(n * n);
        for row in probs.chunks_exact(n) {
            let mut acc = 0.0;
            for &p in row {
                acc += p;
                cumulative.push(acc);
            }
        }
        Self { n, probs, cumulative }
    }

    pub fn new(matrix: &[Vec<f64>]) -> Result<Self, ModelError> {
        validate_kernel(matrix)
    }

    pub fn identity(n: usize) -> Self {
        let mut probs = vec![0.0; n * n];
        for i in 0..n {
            probs[i * n + i] = 1.0;
        }
        Self::from_validated(n, probs)
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n..(s + 1) * self.n]
    }

    #[inline]
    pub fn prob(&self, s: usize, next: usize) -> f64 {
        self.probs[s * self.n + next]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.probs.chunks_exact(self.n).map(<[f64]>::to_vec).collect()
    }

    /// Elementwise transpose; fails if the result is not row-stochastic.
    pub fn transpose(&self) -> Result<Self, ModelError> {
        let n = self.n;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| self.probs[j * n + i]).collect())
            .collect();
        validate_kernel(&rows)
    }

    /// Expectation of `values` under row `s`.
    #[inline]
    pub fn expect(&self, s: usize, values: &[f64]) -> f64 {
        self.row(s).iter().zip(values).map(|(p, v)| p * v).sum()
    }

    /// Maps one uniform draw `u` in `[0, 1)` to a successor of `s`.
    #[inline]
    pub fn sample_with(&self, s: usize, u: f64) -> usize {
        let cum = &self.cumulative[s * self.n..(s + 1) * self.n];
        let probs = self.row(s);
        // Last index with positive mass absorbs rounding at the top of the row.
        let mut last = 0;
        for (j, (&c, &p)) in cum.iter().zip(probs).enumerate() {
            if p > 0.0 {
                if u < c {
                    return j;
                }
                last = j;
            }
        }
        last
    }
}

/// Rewards indexed by state and action.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardTable {
    values: Vec<[f64; 2]>,
}

impl RewardTable {
    pub fn new(values: Vec<[f64; 2]>) -> Result<Self, ModelError> {
        if let Some(state) = values.iter().position(|r| !r[0].is_finite() || !r[1].is_finite()) {
            return Err(ModelError::NonFiniteReward { state });
        }
        Ok(Self { values })
    }

    /// Same reward for both actions in each state.
    pub fn action_independent(per_state: impl IntoIterator<Item = f64>) -> Result<Self, ModelError> {
        Self::new(per_state.into_iter().map(|r| [r, r]).collect())
    }

    pub fn n_states(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn get(&self, s: usize, a: Action) -> f64 {
        self.values[s][a.index()]
    }

    pub fn rows(&self) -> &[[f64; 2]] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0_f64, |m, r| m.max(r.abs()))
    }
}

/// One arm of the bandit: two kernels, a reward table and a category label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArmModelRepr", into = "ArmModelRepr")]
pub struct ArmModel {
    passive: TransitionKernel,
    active: TransitionKernel,
    rewards: RewardTable,
    category: String,
}

impl ArmModel {
    pub fn new(
        passive: TransitionKernel,
        active: TransitionKernel,
        rewards: RewardTable,
        category: impl Into<String>,
    ) -> Result<Self, ModelError> {
        if passive.n_states() != active.n_states() {
            return Err(ModelError::KernelSizeMismatch {
                passive: passive.n_states(),
                active: active.n_states(),
            });
        }
        if rewards.n_states() != passive.n_states() {
            return Err(ModelError::RewardRows {
                rows: rewards.n_states(),
                states: passive.n_states(),
            });
        }
        Ok(Self {
            passive,
            active,
            rewards,
            category: category.into(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.passive.n_states()
    }

    pub fn category(&self) -> &str {
        &self.category
    }

    pub fn kernel(&self, a: Action) -> &TransitionKernel {
        match a {
            Action::Passive => &self.passive,
            Action::Active => &self.active,
        }
    }

    pub fn passive(&self) -> &TransitionKernel {
        &self.passive
    }

    pub fn active(&self) -> &TransitionKernel {
        &self.active
    }

    pub fn rewards(&self) -> &RewardTable {
        &self.rewards
    }

    /// Same model with replaced kernels; label and rewards are kept.
    pub fn with_kernels(&self, passive: TransitionKernel, active: TransitionKernel) -> Result<Self, ModelError> {
        Self::new(passive, active, self.rewards.clone(), self.category.clone())
    }

    /// Whether two arms share kernels and rewards (labels ignored).
    pub fn same_dynamics(&self, other: &ArmModel) -> bool {
        self.passive == other.passive && self.active == other.active && self.rewards == other.rewards
    }

    #[inline]
    pub fn reward_of(&self, s: StateIndex, a: Action) -> f64 {
        self.rewards.get(s.0, a)
    }

    /// Draws a successor of `s` under `a`, consuming exactly one uniform.
    #[inline]
    pub fn sample_next_state(&self, s: StateIndex, a: Action, rng: &mut RngStream) -> StateIndex {
        let u = rng.uniform();
        StateIndex(self.kernel(a).sample_with(s.0, u))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("arm model serializes")
    }
}

/// Wire format of an arm:
/// `{"states", "passive", "active", "rewards": [[passive, active], ...], "category"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArmModelRepr {
    states: usize,
    passive: Vec<Vec<f64>>,
    active: Vec<Vec<f64>>,
    rewards: Vec<[f64; 2]>,
    category: String,
}

impl TryFrom<ArmModelRepr> for ArmModel {
    type Error = ModelError;

    fn try_from(r: ArmModelRepr) -> Result<Self, Self::Error> {
        let passive = validate_kernel(&r.passive)?;
        let active = validate_kernel(&r.active)?;
        if passive.n_states() != r.states {
            return Err(ModelError::DeclaredStates {
                declared: r.states,
                actual: passive.n_states(),
            });
        }
        ArmModel::new(passive, active, RewardTable::new(r.rewards)?, r.category)
    }
}

impl From<ArmModel> for ArmModelRepr {
    fn from(m: ArmModel) -> Self {
        ArmModelRepr {
            states: m.n_states(),
            passive: m.passive.to_rows(),
            active: m.active.to_rows(),
            rewards: m.rewards.values,
            category: m.category,
        }
    }
}

/// N arms with their current states and an exact per-step activation budget.
#[derive(Debug, Clone)]
pub struct ArmEnsemble {
    arms: Vec<ArmModel>,
    states: Vec<StateIndex>,
    budget: usize,
}

impl ArmEnsemble {
    pub fn new(arms: Vec<ArmModel>, states: Vec<StateIndex>, budget: usize) -> Result<Self, ModelError> {
        if states.len() != arms.len() {
            return Err(ModelError::ActionCount {
                expected: arms.len(),
                got: states.len(),
            });
        }
        if budget == 0 || budget > arms.len() {
            return Err(ModelError::InvalidBudget {
                budget,
                arms: arms.len(),
            });
        }
        for (arm, (model, s)) in arms.iter().zip(&states).enumerate() {
            if s.0 >= model.n_states() {
                return Err(ModelError::StateOutOfRange {
                    arm,
                    state: s.0,
                    states: model.n_states(),
                });
            }
        }
        Ok(Self { arms, states, budget })
    }

    /// All arms start in state 0.
    pub fn at_origin(arms: Vec<ArmModel>, budget: usize) -> Result<Self, ModelError> {
        let states = vec![StateIndex(0); arms.len()];
        Self::new(arms, states, budget)
    }

    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn arms(&self) -> &[ArmModel] {
        &self.arms
    }

    pub fn states(&self) -> &[StateIndex] {
        &self.states
    }

    /// Swaps in new arm models, keeping current states. State spaces must match.
    pub fn replace_arms(&mut self, arms: Vec<ArmModel>) -> Result<(), ModelError> {
        if arms.len() != self.arms.len() {
            return Err(ModelError::ActionCount {
                expected: self.arms.len(),
                got: arms.len(),
            });
        }
        for (arm, (new, s)) in arms.iter().zip(&self.states).enumerate() {
            if s.0 >= new.n_states() {
                return Err(ModelError::StateOutOfRange {
                    arm,
                    state: s.0,
                    states: new.n_states(),
                });
            }
        }
        self.arms = arms;
        Ok(())
    }

    fn check_actions(&self, actions: &[Action]) -> Result<(), ModelError> {
        if actions.len() != self.arms.len() {
            return Err(ModelError::ActionCount {
                expected: self.arms.len(),
                got: actions.len(),
            });
        }
        let count = count_active(actions);
        if count != self.budget {
            return Err(ModelError::BudgetViolation {
                count,
                budget: self.budget,
            });
        }
        Ok(())
    }

    /// Advances every arm one step, writing per-arm rewards into `rewards`.
    ///
    /// Draws one uniform per arm in arm order regardless of the actions, so
    /// policies sharing a seed see common random numbers.
    pub fn step_into(
        &mut self,
        actions: &[Action],
        rng: &mut RngStream,
        rewards: &mut Vec<f64>,
    ) -> Result<(), ModelError> {
        self.check_actions(actions)?;
        rewards.clear();
        for ((arm, s), &a) in self.arms.iter().zip(self.states.iter_mut()).zip(actions) {
            rewards.push(arm.reward_of(*s, a));
            *s = arm.sample_next_state(*s, a, rng);
        }
        Ok(())
    }

    /// Advances every arm and returns `(rewards, next states)`.
    pub fn step(&mut self, actions: &[Action], rng: &mut RngStream) -> Result<(Vec<f64>, Vec<StateIndex>), ModelError> {
        let mut rewards = Vec::with_capacity(self.arms.len());
        self.step_into(actions, rng, &mut rewards)?;
        Ok((rewards, self.states.clone()))
    }
}
