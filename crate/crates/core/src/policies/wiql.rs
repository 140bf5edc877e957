//! Per-arm Whittle-index Q-learning with UCB exploration, and its
//! adaptive ε-greedy counterpart.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{check_probability, check_rate, Observation, Result, Scheduler, Transition};
use crate::model::{actions_from_selection, Action, StateIndex};
use crate::rng::RngStream;
use crate::select::top_m_by_score;

/// Q-values, visit counts and index estimates of every arm, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct WiqlTables {
    offsets: Vec<usize>,
    q: Vec<[f64; 2]>,
    c: Vec<[u64; 2]>,
    lam: Vec<f64>,
    gamma: f64,
}

impl WiqlTables {
    pub fn new(state_counts: &[usize], gamma: f64) -> Result<Self> {
        check_rate("gamma", gamma)?;
        let mut offsets = Vec::with_capacity(state_counts.len() + 1);
        let mut total = 0;
        offsets.push(0);
        for &n in state_counts {
            total += n;
            offsets.push(total);
        }
        Ok(Self {
            offsets,
            q: vec![[0.0; 2]; total],
            c: vec![[0; 2]; total],
            lam: vec![0.0; total],
            gamma,
        })
    }

    pub fn n_arms(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_states(&self, arm: usize) -> usize {
        self.offsets[arm + 1] - self.offsets[arm]
    }

    #[inline]
    fn at(&self, arm: usize, s: StateIndex) -> usize {
        debug_assert!(s.0 < self.n_states(arm));
        self.offsets[arm] + s.0
    }

    pub fn q(&self, arm: usize, s: StateIndex) -> [f64; 2] {
        self.q[self.at(arm, s)]
    }

    pub fn counts(&self, arm: usize, s: StateIndex) -> [u64; 2] {
        self.c[self.at(arm, s)]
    }

    pub fn lambda(&self, arm: usize, s: StateIndex) -> f64 {
        self.lam[self.at(arm, s)]
    }

    pub fn set_q(&mut self, arm: usize, s: StateIndex, q: [f64; 2]) {
        let k = self.at(arm, s);
        self.q[k] = q;
        self.lam[k] = q[1] - q[0];
    }

    pub fn set_counts(&mut self, arm: usize, s: StateIndex, c: [u64; 2]) {
        let k = self.at(arm, s);
        self.c[k] = c;
    }

    /// Count first, then `α = 1/(1+c)`, the target `R + γ max Q(s')`, and the
    /// index refresh `λ(s) = Q(s,1) - Q(s,0)`.
    pub fn update(&mut self, arm: usize, s: StateIndex, a: Action, reward: f64, next: StateIndex) {
        let k = self.at(arm, s);
        let kn = self.at(arm, next);
        let ai = a.index();
        self.c[k][ai] += 1;
        let alpha = 1.0 / (1.0 + self.c[k][ai] as f64);
        let target = reward + self.gamma * self.q[kn][0].max(self.q[kn][1]);
        self.q[k][ai] = (1.0 - alpha) * self.q[k][ai] + alpha * target;
        self.lam[k] = self.q[k][1] - self.q[k][0];
    }

    pub fn observe(&mut self, tr: &Transition<'_>) {
        for i in 0..tr.actions.len() {
            self.update(i, tr.states[i], tr.actions[i], tr.rewards[i], tr.next_states[i]);
        }
    }

    /// Current index estimate of every arm.
    pub fn current_lambdas(&self, states: &[StateIndex]) -> Vec<f64> {
        states.iter().enumerate().map(|(i, &s)| self.lambda(i, s)).collect()
    }

    /// Q-entries, counts and index estimates: five scalars per state.
    pub fn stored_values(&self) -> usize {
        5 * self.lam.len()
    }

    pub fn total_visits(&self) -> u64 {
        self.c.iter().map(|c| c[0] + c[1]).sum()
    }

    pub fn snapshot(&self) -> serde_json::Value {
        let per_arm: Vec<_> = (0..self.n_arms())
            .map(|i| {
                let r = self.offsets[i]..self.offsets[i + 1];
                json!({
                    "q": &self.q[r.clone()],
                    "counts": &self.c[r.clone()],
                    "lambda": &self.lam[r],
                })
            })
            .collect();
        json!({ "arms": per_arm })
    }
}

/// `√(2 ln t / (1 + Σ_a c(s,a)))`.
pub fn ucb_bonus(t: u64, visits: u64) -> f64 {
    (2.0 * (t as f64).ln() / (1.0 + visits as f64)).sqrt()
}

/// Whittle-index Q-learning with a UCB bonus on the index.
#[derive(Debug, Clone)]
pub struct WiqlUcb {
    tables: WiqlTables,
}

impl WiqlUcb {
    pub fn new(state_counts: &[usize], gamma: f64) -> Result<Self> {
        Ok(Self {
            tables: WiqlTables::new(state_counts, gamma)?,
        })
    }

    pub fn tables(&self) -> &WiqlTables {
        &self.tables
    }

    pub fn tables_mut(&mut self) -> &mut WiqlTables {
        &mut self.tables
    }

    pub fn scores(&self, t: u64, states: &[StateIndex]) -> Vec<f64> {
        states
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let [c0, c1] = self.tables.counts(i, s);
                self.tables.lambda(i, s) + ucb_bonus(t, c0 + c1)
            })
            .collect()
    }
}

impl Scheduler for WiqlUcb {
    fn select(&mut self, obs: &Observation<'_>, rng: &mut RngStream) -> Vec<Action> {
        let scores = self.scores(obs.t, obs.states);
        actions_from_selection(scores.len(), &top_m_by_score(&scores, obs.budget, rng))
    }

    fn observe(&mut self, tr: &Transition<'_>) {
        self.tables.observe(tr);
    }

    fn stored_values(&self) -> usize {
        self.tables.stored_values()
    }

    fn snapshot(&self) -> serde_json::Value {
        self.tables.snapshot()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiswasParams {
    pub epsilon0: f64,
    pub eps_min: f64,
    pub gamma: f64,
}

impl Default for BiswasParams {
    fn default() -> Self {
        Self {
            epsilon0: 1.0,
            eps_min: 0.0,
            gamma: 1.0,
        }
    }
}

impl BiswasParams {
    /// `max(ε_min, ε₀ N / (N + t))`.
    pub fn epsilon(&self, n: usize, t: u64) -> f64 {
        (self.epsilon0 * n as f64 / (n as f64 + t as f64)).max(self.eps_min)
    }
}

/// The same learner as [`WiqlUcb`] with decaying ε-greedy exploration.
#[derive(Debug, Clone)]
pub struct WiqlBiswas {
    tables: WiqlTables,
    params: BiswasParams,
    forced_epsilon: Option<f64>,
}

impl WiqlBiswas {
    pub fn new(state_counts: &[usize], params: BiswasParams) -> Result<Self> {
        check_probability("epsilon0", params.epsilon0)?;
        check_probability("eps_min", params.eps_min)?;
        Ok(Self {
            tables: WiqlTables::new(state_counts, params.gamma)?,
            params,
            forced_epsilon: None,
        })
    }

    /// Pins ε regardless of the schedule.
    pub fn force_epsilon(&mut self, eps: Option<f64>) {
        self.forced_epsilon = eps;
    }

    pub fn epsilon(&self, t: u64) -> f64 {
        self.forced_epsilon
            .unwrap_or_else(|| self.params.epsilon(self.tables.n_arms(), t))
    }

    pub fn tables(&self) -> &WiqlTables {
        &self.tables
    }

    pub fn tables_mut(&mut self) -> &mut WiqlTables {
        &mut self.tables
    }
}

impl Scheduler for WiqlBiswas {
    fn select(&mut self, obs: &Observation<'_>, rng: &mut RngStream) -> Vec<Action> {
        let n = obs.states.len();
        let explore = rng.uniform() < self.epsilon(obs.t);
        let chosen = if explore {
            sample(rng, n, obs.budget).into_vec()
        } else {
            top_m_by_score(&self.tables.current_lambdas(obs.states), obs.budget, rng)
        };
        actions_from_selection(n, &chosen)
    }

    fn observe(&mut self, tr: &Transition<'_>) {
        self.tables.observe(tr);
    }

    fn stored_values(&self) -> usize {
        self.tables.stored_values()
    }

    fn snapshot(&self) -> serde_json::Value {
        self.tables.snapshot()
    }
}
