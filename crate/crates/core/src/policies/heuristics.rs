//! Model-based myopic greedy and the two model-free sensing heuristics.

use serde_json::json;

use super::{Observation, Result, Scheduler, Transition};
use crate::model::{actions_from_selection, Action, ArmModel, StateIndex};
use crate::rng::RngStream;
use crate::select::top_m_by_score;

/// One-step lookahead advantage of activating in each state:
/// `[R(s,1) + P1 R(.,0)] - [R(s,0) + P0 R(.,0)]`.
pub fn greedy_advantages(arm: &ArmModel) -> Vec<f64> {
    let next: Vec<f64> = (0..arm.n_states())
        .map(|s| arm.reward_of(StateIndex(s), Action::Passive))
        .collect();
    (0..arm.n_states())
        .map(|s| {
            let value = |a: Action| arm.reward_of(StateIndex(s), a) + arm.kernel(a).expect(s, &next);
            value(Action::Active) - value(Action::Passive)
        })
        .collect()
}

/// Activates the arms with the largest one-step advantage under the true model.
#[derive(Debug, Clone)]
pub struct Greedy {
    advantages: Vec<Vec<f64>>,
}

impl Greedy {
    pub fn new(models: &[ArmModel]) -> Self {
        let mut unique: Vec<(&ArmModel, Vec<f64>)> = Vec::new();
        let mut advantages = Vec::with_capacity(models.len());
        for arm in models {
            match unique.iter().find(|(m, _)| m.same_dynamics(arm)) {
                Some((_, adv)) => advantages.push(adv.clone()),
                None => {
                    let adv = greedy_advantages(arm);
                    advantages.push(adv.clone());
                    unique.push((arm, adv));
                }
            }
        }
        Self { advantages }
    }

    pub fn advantages(&self) -> &[Vec<f64>] {
        &self.advantages
    }
}

impl Scheduler for Greedy {
    fn select(&mut self, obs: &Observation<'_>, rng: &mut RngStream) -> Vec<Action> {
        let scores: Vec<f64> = obs
            .states
            .iter()
            .zip(&self.advantages)
            .map(|(s, adv)| adv[s.0])
            .collect();
        actions_from_selection(scores.len(), &top_m_by_score(&scores, obs.budget, rng))
    }

    fn observe(&mut self, _tr: &Transition<'_>) {}

    fn on_dynamics_change(&mut self, models: Option<&[ArmModel]>) -> Result<()> {
        if let Some(models) = models {
            *self = Greedy::new(models);
        }
        Ok(())
    }

    fn stored_values(&self) -> usize {
        self.advantages.iter().map(Vec::len).sum()
    }

    fn snapshot(&self) -> serde_json::Value {
        json!({ "advantages": self.advantages })
    }
}

/// Polls arms in a fixed cyclic order.
#[derive(Debug, Clone)]
pub struct RoundRobin {
    n: usize,
    cursor: usize,
}

impl RoundRobin {
    pub fn new(n: usize) -> Self {
        Self { n, cursor: 0 }
    }

    pub fn with_cursor(n: usize, cursor: usize) -> Self {
        Self { n, cursor: cursor % n }
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Arms `cursor..cursor+m` modulo `n`; the cursor then advances by `m`.
    pub fn next_selection(&mut self, m: usize) -> Vec<usize> {
        let mut picked: Vec<usize> = (0..m).map(|k| (self.cursor + k) % self.n).collect();
        self.cursor = (self.cursor + m) % self.n;
        picked.sort_unstable();
        picked
    }
}

impl Scheduler for RoundRobin {
    fn select(&mut self, obs: &Observation<'_>, _rng: &mut RngStream) -> Vec<Action> {
        let picked = self.next_selection(obs.budget);
        actions_from_selection(self.n, &picked)
    }

    fn observe(&mut self, _tr: &Transition<'_>) {}

    fn stored_values(&self) -> usize {
        1
    }

    fn snapshot(&self) -> serde_json::Value {
        json!({ "cursor": self.cursor })
    }
}

/// Polls the arms that have gone longest without a successful update.
#[derive(Debug, Clone, Copy, Default)]
pub struct AoiGreedy;

impl Scheduler for AoiGreedy {
    fn select(&mut self, obs: &Observation<'_>, rng: &mut RngStream) -> Vec<Action> {
        let scores: Vec<f64> = obs.delays.iter().map(|&d| d as f64).collect();
        actions_from_selection(scores.len(), &top_m_by_score(&scores, obs.budget, rng))
    }

    fn observe(&mut self, _tr: &Transition<'_>) {}

    /// Delays live in the environment.
    fn stored_values(&self) -> usize {
        0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{circulant_arm, process_update_arm, restart_arm};

    fn obs<'a>(states: &'a [StateIndex], delays: &'a [u64], budget: usize) -> Observation<'a> {
        Observation {
            t: 1,
            states,
            delays,
            budget,
        }
    }

    #[test]
    fn round_robin_wraps() {
        let mut rr = RoundRobin::with_cursor(4, 3);
        assert_eq!(rr.next_selection(2), vec![0, 3]);
        assert_eq!(rr.cursor(), 1);
        let mut rr = RoundRobin::new(6);
        let mut hits = [0usize; 6];
        for _ in 0..6 {
            for i in rr.next_selection(4) {
                hits[i] += 1;
            }
        }
        assert!(hits.iter().all(|&h| h == 4));
    }

    #[test]
    fn aoi_picks_the_stalest() {
        let mut p = AoiGreedy;
        let states = [StateIndex(0); 3];
        let acts = p.select(&obs(&states, &[5, 1, 9], 1), &mut RngStream::new(0));
        assert_eq!(acts, vec![Action::Passive, Action::Passive, Action::Active]);
        let acts = p.select(&obs(&states, &[0, 3, 2], 1), &mut RngStream::new(0));
        assert!(!acts[0].is_active());
    }

    #[test]
    fn circulant_advantage_is_symmetric() {
        let arms = vec![circulant_arm(); 5];
        let g = Greedy::new(&arms);
        assert!(g.advantages().windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn restart_activation_never_pays_now() {
        let adv = greedy_advantages(&restart_arm(0.9));
        assert!(adv.iter().all(|&a| a < 0.0), "{adv:?}");
        assert!(adv[4] > adv[0]);
    }

    #[test]
    fn process_update_prefers_high_states() {
        let adv = greedy_advantages(&process_update_arm("A").unwrap());
        assert!(adv.windows(2).all(|w| w[0] < w[1]), "{adv:?}");
        let mut g = Greedy::new(&vec![process_update_arm("A").unwrap(); 3]);
        let states = [StateIndex(1), StateIndex(4), StateIndex(2)];
        let acts = g.select(&obs(&states, &[], 1), &mut RngStream::new(0));
        assert_eq!(acts[1], Action::Active);
    }
}
