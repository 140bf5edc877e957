//! Tabular Q-learning over the joint state and every M-subset of arms.
//!
//! Kept as the non-index baseline: its table is exponential in N and the
//! constructor refuses to allocate past a cap.

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{check_probability, Observation, PolicyError, Result, Scheduler, Transition};
use crate::model::{actions_from_selection, Action, StateIndex};
use crate::rng::RngStream;
use crate::select::top_m_by_score;

pub const DEFAULT_CAPACITY: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointQParams {
    pub epsilon0: f64,
    pub eps_min: f64,
    /// Per-step multiplicative decay of ε.
    pub eps_decay: f64,
    pub gamma: f64,
    /// Largest admissible number of joint table entries.
    pub capacity: u64,
}

impl Default for JointQParams {
    fn default() -> Self {
        Self {
            epsilon0: 0.1,
            eps_min: 0.01,
            eps_decay: 0.95,
            gamma: 1.0,
            capacity: DEFAULT_CAPACITY,
        }
    }
}

impl JointQParams {
    pub fn epsilon(&self, t: u64) -> f64 {
        let exp = i32::try_from(t).unwrap_or(i32::MAX);
        (self.epsilon0 * self.eps_decay.powi(exp)).max(self.eps_min)
    }
}

fn binomial(n: usize, k: usize) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// All `m`-subsets of `0..n` in lexicographic order.
pub fn lexicographic_subsets(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if m > n {
        return out;
    }
    let mut cur: Vec<usize> = (0..m).collect();
    loop {
        out.push(cur.clone());
        let Some(i) = (0..m).rev().find(|&i| cur[i] < n - m + i) else {
            return out;
        };
        cur[i] += 1;
        for j in i + 1..m {
            cur[j] = cur[j - 1] + 1;
        }
    }
}

#[derive(Debug, Clone)]
pub struct JointQ {
    params: JointQParams,
    radix: Vec<usize>,
    subsets: Vec<Vec<usize>>,
    q: Vec<f64>,
    counts: Vec<u64>,
    forced_epsilon: Option<f64>,
}

impl JointQ {
    /// Entries needed for the given state counts and budget, if representable.
    pub fn required_entries(state_counts: &[usize], m: usize) -> Option<u128> {
        let joint = state_counts
            .iter()
            .try_fold(1u128, |acc, &s| acc.checked_mul(s as u128))?;
        joint.checked_mul(binomial(state_counts.len(), m)?)
    }

    pub fn new(state_counts: &[usize], m: usize, params: JointQParams) -> Result<Self> {
        check_probability("epsilon0", params.epsilon0)?;
        check_probability("eps_min", params.eps_min)?;
        check_probability("eps_decay", params.eps_decay)?;
        if !(params.gamma > 0.0 && params.gamma <= 1.0) {
            return Err(PolicyError::InvalidParameter {
                name: "gamma",
                reason: format!("{} is outside (0, 1]", params.gamma),
            });
        }
        let cap = params.capacity as u128;
        let needed = Self::required_entries(state_counts, m).unwrap_or(u128::MAX);
        if needed > cap {
            return Err(PolicyError::CapacityExceeded { needed, cap });
        }
        let entries = needed as usize;
        Ok(Self {
            radix: state_counts.to_vec(),
            subsets: lexicographic_subsets(state_counts.len(), m),
            q: vec![0.0; entries],
            counts: vec![0; entries],
            params,
            forced_epsilon: None,
        })
    }

    pub fn table_entries(&self) -> usize {
        self.q.len()
    }

    pub fn n_actions(&self) -> usize {
        self.subsets.len()
    }

    pub fn force_epsilon(&mut self, eps: Option<f64>) {
        self.forced_epsilon = eps;
    }

    /// Mixed-radix code with arm 0 most significant.
    pub fn encode(&self, states: &[StateIndex]) -> usize {
        states.iter().zip(&self.radix).fold(0, |acc, (s, &r)| acc * r + s.0)
    }

    /// Position of the active set among the lexicographic subsets.
    pub fn action_index(&self, actions: &[Action]) -> usize {
        let active: Vec<usize> = actions
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_active())
            .map(|(i, _)| i)
            .collect();
        self.subsets
            .binary_search(&active)
            .expect("action vector uses the configured budget")
    }

    pub fn q_row(&self, joint: usize) -> &[f64] {
        let k = self.subsets.len();
        &self.q[joint * k..(joint + 1) * k]
    }

    pub fn q_row_mut(&mut self, joint: usize) -> &mut [f64] {
        let k = self.subsets.len();
        &mut self.q[joint * k..(joint + 1) * k]
    }
}

impl Scheduler for JointQ {
    fn select(&mut self, obs: &Observation<'_>, rng: &mut RngStream) -> Vec<Action> {
        let eps = self.forced_epsilon.unwrap_or_else(|| self.params.epsilon(obs.t));
        let k = self.subsets.len();
        let choice = if rng.uniform() < eps {
            (rng.uniform() * k as f64) as usize % k
        } else {
            top_m_by_score(self.q_row(self.encode(obs.states)), 1, rng)[0]
        };
        actions_from_selection(obs.states.len(), &self.subsets[choice])
    }

    fn observe(&mut self, tr: &Transition<'_>) {
        let k = self.subsets.len();
        let x = self.encode(tr.states);
        let xn = self.encode(tr.next_states);
        let a = self.action_index(tr.actions);
        let reward: f64 = tr.rewards.iter().sum();
        let best_next = self.q_row(xn).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let cell = x * k + a;
        self.counts[cell] += 1;
        let alpha = 1.0 / (1.0 + self.counts[cell] as f64);
        self.q[cell] = (1.0 - alpha) * self.q[cell] + alpha * (reward + self.params.gamma * best_next);
    }

    /// Q-values plus visit counts.
    fn stored_values(&self) -> usize {
        self.q.len() + self.counts.len()
    }

    fn snapshot(&self) -> serde_json::Value {
        json!({ "entries": self.q.len(), "visited": self.counts.iter().filter(|&&c| c > 0).count() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_are_lexicographic() {
        assert_eq!(
            lexicographic_subsets(4, 2),
            vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]
        );
        assert_eq!(lexicographic_subsets(3, 3), vec![vec![0, 1, 2]]);
        assert_eq!(lexicographic_subsets(15, 3).len(), 455);
        assert_eq!(binomial(15, 3), Some(455));
    }

    #[test]
    fn two_circulant_arms_need_32_entries() {
        let p = JointQ::new(&[4, 4], 1, JointQParams::default()).unwrap();
        assert_eq!(p.table_entries(), 32);
        assert_eq!(p.stored_values(), 64);
    }

    #[test]
    fn capacity_exceeded_at_fifteen_arms() {
        let err = JointQ::new(&[4; 15], 3, JointQParams::default()).unwrap_err();
        let needed = 4u128.pow(15) * 455;
        assert_eq!(
            err,
            PolicyError::CapacityExceeded {
                needed,
                cap: 10_000_000
            }
        );
        assert!(JointQ::required_entries(&[1000; 40], 3).is_none());
    }

    #[test]
    fn greedy_matches_exhaustive_argmax() {
        let mut p = JointQ::new(&[4, 4], 1, JointQParams::default()).unwrap();
        p.force_epsilon(Some(0.0));
        let states = [StateIndex(2), StateIndex(1)];
        let x = p.encode(&states);
        assert_eq!(x, 9);
        p.q_row_mut(x).copy_from_slice(&[-0.5, 0.75]);
        let obs = Observation {
            t: 3,
            states: &states,
            delays: &[],
            budget: 1,
        };
        let acts = p.select(&obs, &mut RngStream::new(0));
        assert_eq!(acts, vec![Action::Passive, Action::Active]);
        assert_eq!(p.action_index(&acts), 1);
    }

    #[test]
    fn update_uses_joint_reward() {
        let mut p = JointQ::new(&[2, 2], 1, JointQParams::default()).unwrap();
        let s = [StateIndex(0), StateIndex(1)];
        p.observe(&Transition {
            t: 1,
            states: &s,
            actions: &[Action::Active, Action::Passive],
            rewards: &[1.0, 2.0],
            next_states: &s,
        });
        assert_eq!(p.q_row(p.encode(&s)), &[1.5, 0.0]);
    }

    #[test]
    fn epsilon_schedule() {
        let p = JointQParams::default();
        assert_eq!(p.epsilon(0), 0.1);
        assert!((p.epsilon(1) - 0.095).abs() < 1e-12);
        assert_eq!(p.epsilon(10_000), 0.01);
    }
}
