//! Two-timescale Whittle-index Q-learning with tables shared across arms.
//!
//! For every reference state `k` there is a Q-table learned under the
//! activation penalty `λ[k]` by relative value iteration Q-learning on the
//! fast timescale, while `λ[k]` drifts on the slow timescale toward the
//! value that makes state `k` indifferent.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{check_probability, common_state_count, Observation, PolicyError, Result, Scheduler, Transition};
use crate::model::{actions_from_selection, Action};
use crate::rng::RngStream;
use crate::select::top_m_by_score;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AbParams {
    /// Fast rate is `1 / (1 + ceil(c / fast_divisor))`.
    pub fast_divisor: f64,
    /// Slow rate is `slow_scale / (1 + slow_decay * t)`.
    pub slow_scale: f64,
    pub slow_decay: f64,
    /// Probability of a uniformly random selection.
    pub epsilon: f64,
}

impl Default for AbParams {
    fn default() -> Self {
        Self {
            fast_divisor: 10.0,
            slow_scale: 0.01,
            slow_decay: 0.001,
            epsilon: 0.0,
        }
    }
}

impl AbParams {
    pub fn fast_rate(&self, visits: u64) -> f64 {
        1.0 / (1.0 + (visits as f64 / self.fast_divisor).ceil())
    }

    pub fn slow_rate(&self, t: u64) -> f64 {
        self.slow_scale / (1.0 + self.slow_decay * t as f64)
    }
}

#[derive(Debug, Clone)]
pub struct TwoTimescaleWiql {
    params: AbParams,
    n_states: usize,
    /// `q[k][s][a]` learned under penalty `lam[k]`.
    q: Vec<Vec<[f64; 2]>>,
    /// Running sum of each table's entries, for the RVI offset.
    q_sum: Vec<f64>,
    counts: Vec<[u64; 2]>,
    lam: Vec<f64>,
}

impl TwoTimescaleWiql {
    pub fn new(state_counts: &[usize], params: AbParams) -> Result<Self> {
        let n_states = common_state_count(state_counts)?;
        if !(params.fast_divisor > 0.0) {
            return Err(PolicyError::InvalidParameter {
                name: "fast_divisor",
                reason: format!("{} must be positive", params.fast_divisor),
            });
        }
        check_probability("slow_scale", params.slow_scale)?;
        check_probability("epsilon", params.epsilon)?;
        if !(params.slow_decay >= 0.0) {
            return Err(PolicyError::InvalidParameter {
                name: "slow_decay",
                reason: format!("{} must be non-negative", params.slow_decay),
            });
        }
        Ok(Self {
            params,
            n_states,
            q: vec![vec![[0.0; 2]; n_states]; n_states],
            q_sum: vec![0.0; n_states],
            counts: vec![[0; 2]; n_states],
            lam: vec![0.0; n_states],
        })
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lam
    }

    pub fn set_lambdas(&mut self, lam: &[f64]) {
        self.lam.copy_from_slice(lam);
    }

    pub fn table(&self, k: usize) -> &[[f64; 2]] {
        &self.q[k]
    }

    pub fn set_table(&mut self, k: usize, table: &[[f64; 2]]) {
        self.q[k].copy_from_slice(table);
        self.q_sum[k] = table.iter().map(|r| r[0] + r[1]).sum();
    }

    fn fast_update(&mut self, s: usize, a: Action, reward: f64, next: usize) {
        let ai = a.index();
        self.counts[s][ai] += 1;
        let alpha = self.params.fast_rate(self.counts[s][ai]);
        let entries = (2 * self.n_states) as f64;
        for k in 0..self.n_states {
            let table = &mut self.q[k];
            let offset = self.q_sum[k] / entries;
            let penalty = if a.is_active() { self.lam[k] } else { 0.0 };
            let target = reward - penalty + table[next][0].max(table[next][1]) - offset;
            let delta = alpha * (target - table[s][ai]);
            table[s][ai] += delta;
            self.q_sum[k] += delta;
        }
    }

    /// Moves every `λ[k]` by `β_t (Q_k(k,1) - Q_k(k,0))`.
    pub fn slow_update(&mut self, t: u64) {
        let beta = self.params.slow_rate(t);
        for k in 0..self.n_states {
            let gap = self.q[k][k][1] - self.q[k][k][0];
            self.lam[k] += beta * gap;
        }
    }
}

impl Scheduler for TwoTimescaleWiql {
    fn select(&mut self, obs: &Observation<'_>, rng: &mut RngStream) -> Vec<Action> {
        let n = obs.states.len();
        let chosen = if self.params.epsilon > 0.0 && rng.uniform() < self.params.epsilon {
            sample(rng, n, obs.budget).into_vec()
        } else {
            let scores: Vec<f64> = obs.states.iter().map(|s| self.lam[s.0]).collect();
            top_m_by_score(&scores, obs.budget, rng)
        };
        actions_from_selection(n, &chosen)
    }

    fn observe(&mut self, tr: &Transition<'_>) {
        for i in 0..tr.actions.len() {
            self.fast_update(tr.states[i].0, tr.actions[i], tr.rewards[i], tr.next_states[i].0);
        }
        self.slow_update(tr.t);
    }

    /// One table per reference state plus shared counts and indices.
    fn stored_values(&self) -> usize {
        let s = self.n_states;
        2 * s * s + 2 * s + s
    }

    fn snapshot(&self) -> serde_json::Value {
        json!({ "lambda": self.lam, "counts": self.counts, "q": self.q })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StateIndex;

    fn transition<'a>(
        t: u64,
        states: &'a [StateIndex],
        actions: &'a [Action],
        rewards: &'a [f64],
        next: &'a [StateIndex],
    ) -> Transition<'a> {
        Transition {
            t,
            states,
            actions,
            rewards,
            next_states: next,
        }
    }

    #[test]
    fn frozen_when_slow_rate_is_zero() {
        let params = AbParams {
            slow_scale: 0.0,
            ..AbParams::default()
        };
        let mut p = TwoTimescaleWiql::new(&[3, 3], params).unwrap();
        p.set_lambdas(&[0.3, -0.2, 0.7]);
        let states = [StateIndex(0), StateIndex(1)];
        for t in 1..200 {
            p.observe(&transition(
                t,
                &states,
                &[Action::Active, Action::Passive],
                &[1.0, -1.0],
                &states,
            ));
        }
        assert_eq!(p.lambdas(), &[0.3, -0.2, 0.7]);
    }

    #[test]
    fn zero_gap_leaves_index_unchanged() {
        let mut p = TwoTimescaleWiql::new(&[2], AbParams::default()).unwrap();
        p.set_lambdas(&[0.4, 0.1]);
        p.set_table(0, &[[1.0, 1.0], [0.0, 3.0]]);
        p.set_table(1, &[[2.0, 0.0], [5.0, 5.0]]);
        p.slow_update(1);
        assert_eq!(p.lambdas(), &[0.4, 0.1]);
        p.set_table(0, &[[1.0, 2.0], [0.0, 0.0]]);
        p.slow_update(0);
        assert!((p.lambdas()[0] - 0.41).abs() < 1e-12);
    }

    #[test]
    fn rates() {
        let p = AbParams::default();
        assert_eq!(p.fast_rate(1), 0.5);
        assert_eq!(p.fast_rate(10), 0.5);
        assert_eq!(p.fast_rate(11), 1.0 / 3.0);
        assert_eq!(p.slow_rate(0), 0.01);
        assert!((p.slow_rate(1000) - 0.005).abs() < 1e-15);
    }

    #[test]
    fn heterogeneous_sizes_rejected() {
        assert!(matches!(
            TwoTimescaleWiql::new(&[4, 4, 5], AbParams::default()),
            Err(PolicyError::DimensionMismatch { first: 4, other: 5 })
        ));
    }

    #[test]
    fn selection_follows_state_indices() {
        let mut p = TwoTimescaleWiql::new(&[3; 3], AbParams::default()).unwrap();
        p.set_lambdas(&[-1.0, 2.0, 0.5]);
        let states = [StateIndex(0), StateIndex(2), StateIndex(1)];
        let obs = Observation {
            t: 1,
            states: &states,
            delays: &[],
            budget: 2,
        };
        let acts = p.select(&obs, &mut RngStream::new(0));
        assert_eq!(acts, vec![Action::Passive, Action::Active, Action::Active]);
        assert_eq!(p.stored_values(), 2 * 9 + 9);
    }
}
