//! Exact Whittle indices for a known arm.
//!
//! The single-arm problem with an activation penalty λ is solved by
//! average-reward relative value iteration (RVI). The index of a state is the
//! penalty at which both actions are equally attractive there, located by
//! bisection on the indifference gap `g(λ) = Q_λ(s,1) - Q_λ(s,0)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{actions_from_selection, Action, ArmModel, StateIndex};
use crate::rng::RngStream;
use crate::select::top_m_by_score;

pub const DEFAULT_LAMBDA_TOL: f64 = 1e-6;
pub const DEFAULT_VALUE_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITERS: usize = 100_000;
pub const MAX_BRACKET_EXPANSIONS: u32 = 60;

/// Gaps within this band count as indifference, which resolves to passive.
pub const GAP_EPS: f64 = 1e-7;

// Damping keeps RVI convergent on periodic chains without moving its fixed point.
const DAMPING: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WhittleError {
    #[error("value iteration did not converge in {max_iters} iterations (span {residual_span:e})")]
    NoConvergence { max_iters: usize, residual_span: f64 },
    #[error("no sign change of the indifference gap for state {state}")]
    BracketFailure { state: usize },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("state {state} out of range for a {states}-state arm")]
    StateOutOfRange { state: usize, states: usize },
    #[error("lambda grid must be non-empty and ascending")]
    InvalidGrid,
    #[error("expected {expected} tables or states, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, WhittleError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WhittleOptions {
    pub lambda_tol: f64,
    pub value_tol: f64,
    pub max_iters: usize,
    /// Starting bracket; defaults to `±(1 + max |R|)`.
    pub bracket: Option<(f64, f64)>,
}

impl Default for WhittleOptions {
    fn default() -> Self {
        Self {
            lambda_tol: DEFAULT_LAMBDA_TOL,
            value_tol: DEFAULT_VALUE_TOL,
            max_iters: DEFAULT_MAX_ITERS,
            bracket: None,
        }
    }
}

/// Relative values and gain of the penalized single-arm MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizedValueFunction {
    /// Relative values with `v[0] == 0`.
    pub v: Vec<f64>,
    pub gain: f64,
    pub lambda_penalty: f64,
    pub iterations: usize,
}

impl PenalizedValueFunction {
    pub fn q(&self, arm: &ArmModel, s: usize, a: Action) -> f64 {
        let penalty = if a.is_active() { self.lambda_penalty } else { 0.0 };
        arm.reward_of(StateIndex(s), a) - penalty + arm.kernel(a).expect(s, &self.v) - self.gain
    }

    /// `Q(s,1) - Q(s,0)`; positive means activation is strictly better.
    pub fn gap(&self, arm: &ArmModel, s: usize) -> f64 {
        self.q(arm, s, Action::Active) - self.q(arm, s, Action::Passive)
    }

    pub fn greedy_action(&self, arm: &ArmModel, s: usize) -> Action {
        Action::from_active(self.gap(arm, s) > GAP_EPS)
    }

    /// Membership of each state in the optimal passive set D(λ).
    pub fn passive_set(&self, arm: &ArmModel) -> Vec<bool> {
        (0..arm.n_states())
            .map(|s| !self.greedy_action(arm, s).is_active())
            .collect()
    }
}

fn bellman(arm: &ArmModel, lambda: f64, v: &[f64], out: &mut [f64]) {
    for (s, o) in out.iter_mut().enumerate() {
        let passive = arm.reward_of(StateIndex(s), Action::Passive) + arm.passive().expect(s, v);
        let active = arm.reward_of(StateIndex(s), Action::Active) - lambda + arm.active().expect(s, v);
        *o = passive.max(active);
    }
}

fn solve_from(
    arm: &ArmModel,
    lambda: f64,
    tol: f64,
    max_iters: usize,
    mut v: Vec<f64>,
) -> Result<PenalizedValueFunction> {
    if !(tol > 0.0) {
        return Err(WhittleError::InvalidTolerance(tol));
    }
    let n = arm.n_states();
    let mut tv = vec![0.0; n];
    let mut span = f64::INFINITY;
    for iter in 1..=max_iters {
        bellman(arm, lambda, &v, &mut tv);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (t, x) in tv.iter().zip(&v) {
            let d = t - x;
            lo = lo.min(d);
            hi = hi.max(d);
        }
        span = hi - lo;
        if span < tol {
            return Ok(PenalizedValueFunction {
                gain: 0.5 * (hi + lo),
                v,
                lambda_penalty: lambda,
                iterations: iter,
            });
        }
        for (x, t) in v.iter_mut().zip(&tv) {
            *x += DAMPING * (t - *x);
        }
        let pin = v[0];
        v.iter_mut().for_each(|x| *x -= pin);
    }
    Err(WhittleError::NoConvergence {
        max_iters,
        residual_span: span,
    })
}

/// Solves the single-arm MDP where activation costs `lambda_penalty`.
///
/// Iterates until the span of `Tv - v` drops below `tol`; the gain is the
/// midpoint of that final difference.
pub fn solve_penalized_mdp(
    arm: &ArmModel,
    lambda_penalty: f64,
    tol: f64,
    max_iters: usize,
) -> Result<PenalizedValueFunction> {
    solve_from(arm, lambda_penalty, tol, max_iters, vec![0.0; arm.n_states()])
}

/// Outcome of a single-state index search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexSolution {
    pub lambda: f64,
    pub iterations: usize,
}

struct GapEvaluator<'a> {
    arm: &'a ArmModel,
    state: usize,
    opts: WhittleOptions,
    warm: Vec<f64>,
}

impl GapEvaluator<'_> {
    fn gap(&mut self, lambda: f64) -> Result<f64> {
        let sol = solve_from(
            self.arm,
            lambda,
            self.opts.value_tol,
            self.opts.max_iters,
            std::mem::take(&mut self.warm),
        )?;
        let g = sol.gap(self.arm, self.state);
        self.warm = sol.v;
        Ok(g)
    }
}

fn default_bracket(arm: &ArmModel) -> (f64, f64) {
    let r = 1.0 + arm.rewards().max_abs();
    (-r, r)
}

/// Whittle index of one state by bisection to width `opts.lambda_tol`.
///
/// The bracket doubles its half-width around its centre until the gap is
/// positive at the low end and non-positive at the high end.
pub fn whittle_index_of_state(arm: &ArmModel, s: StateIndex, opts: &WhittleOptions) -> Result<IndexSolution> {
    if s.0 >= arm.n_states() {
        return Err(WhittleError::StateOutOfRange {
            state: s.0,
            states: arm.n_states(),
        });
    }
    if !(opts.lambda_tol > 0.0) {
        return Err(WhittleError::InvalidTolerance(opts.lambda_tol));
    }
    let (mut lo, mut hi) = opts.bracket.unwrap_or_else(|| default_bracket(arm));
    let mut eval = GapEvaluator {
        arm,
        state: s.0,
        opts: *opts,
        warm: vec![0.0; arm.n_states()],
    };
    let mut iterations = 0;
    let mut expansions = 0;
    loop {
        let g_lo = eval.gap(lo)?;
        let g_hi = eval.gap(hi)?;
        iterations += 2;
        if g_lo > 0.0 && g_hi <= 0.0 {
            break;
        }
        if expansions == MAX_BRACKET_EXPANSIONS {
            return Err(WhittleError::BracketFailure { state: s.0 });
        }
        let centre = 0.5 * (lo + hi);
        let half = hi - lo;
        lo = centre - half;
        hi = centre + half;
        expansions += 1;
    }
    while hi - lo > opts.lambda_tol {
        let mid = 0.5 * (lo + hi);
        if eval.gap(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    Ok(IndexSolution {
        lambda: 0.5 * (lo + hi),
        iterations,
    })
}

/// Per-state Whittle indices of one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhittleTable {
    pub indices: Vec<f64>,
    pub converged: Vec<bool>,
    pub iterations_used: Vec<usize>,
}

impl WhittleTable {
    pub fn index(&self, s: StateIndex) -> f64 {
        self.indices[s.0]
    }

    pub fn n_states(&self) -> usize {
        self.indices.len()
    }

    pub fn all_converged(&self) -> bool {
        self.converged.iter().all(|&c| c)
    }
}

/// Solves every state of `arm`. A state whose gap never changes sign is
/// recorded as unconverged with a NaN index; value-iteration failures abort.
pub fn solve_whittle_table(arm: &ArmModel, opts: &WhittleOptions) -> Result<WhittleTable> {
    let n = arm.n_states();
    let mut table = WhittleTable {
        indices: Vec::with_capacity(n),
        converged: Vec::with_capacity(n),
        iterations_used: Vec::with_capacity(n),
    };
    for s in 0..n {
        match whittle_index_of_state(arm, StateIndex(s), opts) {
            Ok(sol) => {
                table.indices.push(sol.lambda);
                table.converged.push(true);
                table.iterations_used.push(sol.iterations);
            }
            Err(WhittleError::BracketFailure { .. }) => {
                table.indices.push(f64::NAN);
                table.converged.push(false);
                table.iterations_used.push(0);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(table)
}

/// Tables for a whole ensemble. Arms with identical dynamics are solved once.
pub fn solve_tables(arms: &[ArmModel], opts: &WhittleOptions) -> Result<Vec<WhittleTable>> {
    let mut unique: Vec<&ArmModel> = Vec::new();
    let mut slot = Vec::with_capacity(arms.len());
    for arm in arms {
        match unique.iter().position(|u| u.same_dynamics(arm)) {
            Some(k) => slot.push(k),
            None => {
                slot.push(unique.len());
                unique.push(arm);
            }
        }
    }
    let solved: Vec<WhittleTable> = unique
        .par_iter()
        .map(|arm| solve_whittle_table(arm, opts))
        .collect::<Result<_>>()?;
    Ok(slot.into_iter().map(|k| solved[k].clone()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexabilityReport {
    pub indexable: bool,
    /// First grid pair `(k, k + 1)` where D(λ) shrank.
    pub violation: Option<(usize, usize)>,
    pub passive_sets: Vec<Vec<bool>>,
}

/// Checks that the optimal passive set grows monotonically along `lambda_grid`.
pub fn indexability_check(arm: &ArmModel, lambda_grid: &[f64], opts: &WhittleOptions) -> Result<IndexabilityReport> {
    if lambda_grid.is_empty() || lambda_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(WhittleError::InvalidGrid);
    }
    let mut warm = vec![0.0; arm.n_states()];
    let mut passive_sets = Vec::with_capacity(lambda_grid.len());
    for &lambda in lambda_grid {
        let sol = solve_from(arm, lambda, opts.value_tol, opts.max_iters, warm)?;
        passive_sets.push(sol.passive_set(arm));
        warm = sol.v;
    }
    let violation = passive_sets
        .windows(2)
        .position(|w| w[0].iter().zip(&w[1]).any(|(&before, &after)| before && !after))
        .map(|k| (k, k + 1));
    Ok(IndexabilityReport {
        indexable: violation.is_none(),
        violation,
        passive_sets,
    })
}

/// Evenly spaced grid from `lo` to `hi` inclusive.
pub fn linear_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..points)
            .map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

/// Activates the `m` arms with the largest current index, ties at random.
pub fn oracle_policy(
    tables: &[WhittleTable],
    states: &[StateIndex],
    m: usize,
    rng: &mut RngStream,
) -> Result<Vec<Action>> {
    if tables.len() != states.len() {
        return Err(WhittleError::LengthMismatch {
            expected: tables.len(),
            got: states.len(),
        });
    }
    let scores: Vec<f64> = tables.iter().zip(states).map(|(t, &s)| t.index(s)).collect();
    let chosen = top_m_by_score(&scores, m, rng);
    Ok(actions_from_selection(tables.len(), &chosen))
}
