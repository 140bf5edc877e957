//! Grid-search Whittle-index learning with a shared table per candidate.
//!
//! Every grid value λ_k owns a Q-table learned under activation penalty λ_k
//! from the transitions of all arms. Once per window the index of each state
//! is re-chosen as the grid value whose active and passive values are
//! closest.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{common_state_count, Observation, PolicyError, Result, Scheduler, Transition};
use crate::model::{actions_from_selection, Action};
use crate::rng::RngStream;
use crate::select::top_m_by_score;
use crate::whittle::linear_grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FuParams {
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_points: usize,
    pub eval_window: u64,
    pub gamma: f64,
}

impl Default for FuParams {
    fn default() -> Self {
        Self {
            grid_lo: -2.0,
            grid_hi: 2.0,
            grid_points: 21,
            eval_window: 1000,
            gamma: 1.0,
        }
    }
}

impl FuParams {
    fn validate(&self) -> Result<()> {
        let bad = |name, reason: String| Err(PolicyError::InvalidParameter { name, reason });
        if self.grid_points == 0 {
            return bad("grid_points", "must be at least 1".into());
        }
        if self.grid_points > 1 && !(self.grid_lo < self.grid_hi) {
            return bad("grid_lo", format!("{} is not below {}", self.grid_lo, self.grid_hi));
        }
        if self.eval_window == 0 {
            return bad("eval_window", "must be positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", format!("{} is outside (0, 1]", self.gamma));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GridSearchWiql {
    params: FuParams,
    grid: Vec<f64>,
    n_states: usize,
    /// `q[k * n_states + s][a]` under penalty `grid[k]`.
    q: Vec<[f64; 2]>,
    counts: Vec<[u64; 2]>,
    index: Vec<f64>,
}

impl GridSearchWiql {
    pub fn new(state_counts: &[usize], params: FuParams) -> Result<Self> {
        params.validate()?;
        let n_states = common_state_count(state_counts)?;
        let grid = linear_grid(params.grid_lo, params.grid_hi, params.grid_points);
        // A one-point grid pins every index to that point.
        let start = if grid.len() == 1 { grid[0] } else { 0.0 };
        Ok(Self {
            q: vec![[0.0; 2]; grid.len() * n_states],
            counts: vec![[0; 2]; n_states],
            index: vec![start; n_states],
            grid,
            n_states,
            params,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn indices(&self) -> &[f64] {
        &self.index
    }

    pub fn q(&self, k: usize, s: usize) -> [f64; 2] {
        self.q[k * self.n_states + s]
    }

    pub fn set_q(&mut self, k: usize, s: usize, q: [f64; 2]) {
        self.q[k * self.n_states + s] = q;
    }

    /// Adopts, per state, the grid value with the smallest |Q(s,1) - Q(s,0)|.
    pub fn rescore(&mut self) {
        for s in 0..self.n_states {
            let mut best = (f64::INFINITY, self.index[s]);
            for (k, &lam) in self.grid.iter().enumerate() {
                let [q0, q1] = self.q(k, s);
                let gap = (q1 - q0).abs();
                if gap < best.0 {
                    best = (gap, lam);
                }
            }
            self.index[s] = best.1;
        }
    }

    fn update(&mut self, s: usize, a: Action, reward: f64, next: usize) {
        let ai = a.index();
        self.counts[s][ai] += 1;
        let alpha = 1.0 / (1.0 + self.counts[s][ai] as f64);
        let act = if a.is_active() { 1.0 } else { 0.0 };
        for (k, &lam) in self.grid.iter().enumerate() {
            let base = k * self.n_states;
            let nq = self.q[base + next];
            let target = reward - lam * act + self.params.gamma * nq[0].max(nq[1]);
            let cell = &mut self.q[base + s][ai];
            *cell = (1.0 - alpha) * *cell + alpha * target;
        }
    }
}

impl Scheduler for GridSearchWiql {
    fn select(&mut self, obs: &Observation<'_>, rng: &mut RngStream) -> Vec<Action> {
        let scores: Vec<f64> = obs.states.iter().map(|s| self.index[s.0]).collect();
        actions_from_selection(scores.len(), &top_m_by_score(&scores, obs.budget, rng))
    }

    fn observe(&mut self, tr: &Transition<'_>) {
        for i in 0..tr.actions.len() {
            self.update(tr.states[i].0, tr.actions[i], tr.rewards[i], tr.next_states[i].0);
        }
        if tr.t.is_multiple_of(self.params.eval_window) {
            self.rescore();
        }
    }

    fn stored_values(&self) -> usize {
        2 * self.q.len() + 2 * self.n_states + self.n_states
    }

    fn snapshot(&self) -> serde_json::Value {
        json!({ "grid": self.grid, "index": self.index, "counts": self.counts })
    }
}
