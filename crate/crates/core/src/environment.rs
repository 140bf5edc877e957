//! The stepping interface the harness drives, over kernel ensembles and the
//! sensing pipeline alike.

use crate::envs::{apply_dynamic_switch, EnvError, EnvKind, EnvSpec};
use crate::model::{Action, ArmEnsemble, ArmModel, ModelError, StateIndex};
use crate::rng::RngStream;
use crate::sensing::{SensingEnv, SensingError};

/// Stream id of the transition draws within a run's seed.
pub const TRANSITION_STREAM: u64 = 0;

pub trait Environment: Send {
    fn n_arms(&self) -> usize;

    fn budget(&self) -> usize;

    /// Number of states of every arm.
    fn state_counts(&self) -> Vec<usize>;

    fn categories(&self) -> Vec<String>;

    fn states(&self) -> &[StateIndex];

    /// Steps since each arm's last successful activation.
    fn delays(&self) -> &[u64];

    /// True arm models, when the environment has any.
    fn models(&self) -> Option<&[ArmModel]>;

    /// Called at the start of step `t` (1-based). Returns true when the
    /// dynamics changed.
    fn begin_step(&mut self, t: u64) -> Result<bool, EnvError>;

    /// Applies one action vector, writing per-arm rewards for the
    /// pre-transition states.
    fn step(&mut self, actions: &[Action], rewards: &mut Vec<f64>) -> Result<(), ModelError>;
}

/// A kernel ensemble with its own transition stream.
pub struct BenchmarkEnv {
    ensemble: ArmEnsemble,
    rng: RngStream,
    delays: Vec<u64>,
    switch_step: Option<u64>,
    categories: Vec<String>,
}

impl BenchmarkEnv {
    pub fn new(arms: Vec<ArmModel>, budget: usize, seed: u64, switch_step: Option<u64>) -> Result<Self, ModelError> {
        let categories = arms.iter().map(|a| a.category().to_string()).collect();
        let n = arms.len();
        Ok(Self {
            ensemble: ArmEnsemble::at_origin(arms, budget)?,
            rng: RngStream::with_stream(seed, TRANSITION_STREAM),
            delays: vec![0; n],
            switch_step,
            categories,
        })
    }

    pub fn from_spec(spec: &EnvSpec, seed: u64) -> Result<Self, EnvError> {
        Ok(Self::new(
            spec.build_arms()?,
            spec.budget_m,
            seed,
            spec.dynamic_switch_step,
        )?)
    }

    pub fn ensemble(&self) -> &ArmEnsemble {
        &self.ensemble
    }
}

impl Environment for BenchmarkEnv {
    fn n_arms(&self) -> usize {
        self.ensemble.len()
    }

    fn budget(&self) -> usize {
        self.ensemble.budget()
    }

    fn state_counts(&self) -> Vec<usize> {
        self.ensemble.arms().iter().map(ArmModel::n_states).collect()
    }

    fn categories(&self) -> Vec<String> {
        self.categories.clone()
    }

    fn states(&self) -> &[StateIndex] {
        self.ensemble.states()
    }

    fn delays(&self) -> &[u64] {
        &self.delays
    }

    fn models(&self) -> Option<&[ArmModel]> {
        Some(self.ensemble.arms())
    }

    fn begin_step(&mut self, t: u64) -> Result<bool, EnvError> {
        if self.switch_step != Some(t) {
            return Ok(false);
        }
        let switched = apply_dynamic_switch(self.ensemble.arms())?;
        self.ensemble.replace_arms(switched)?;
        Ok(true)
    }

    fn step(&mut self, actions: &[Action], rewards: &mut Vec<f64>) -> Result<(), ModelError> {
        self.ensemble.step_into(actions, &mut self.rng, rewards)?;
        for (d, a) in self.delays.iter_mut().zip(actions) {
            *d = if a.is_active() { 0 } else { *d + 1 };
        }
        Ok(())
    }
}

/// Sensing pipeline adapter; it exposes the sink's age as the delay.
pub struct SensingAdapter {
    env: SensingEnv,
    delays: Vec<u64>,
}

impl SensingAdapter {
    pub fn new(env: SensingEnv) -> Self {
        let delays = env.aoi();
        Self { env, delays }
    }

    pub fn inner(&self) -> &SensingEnv {
        &self.env
    }
}

impl Environment for SensingAdapter {
    fn n_arms(&self) -> usize {
        self.env.len()
    }

    fn budget(&self) -> usize {
        self.env.budget()
    }

    fn state_counts(&self) -> Vec<usize> {
        vec![self.env.n_bins(); self.env.len()]
    }

    fn categories(&self) -> Vec<String> {
        self.env.categories().to_vec()
    }

    fn states(&self) -> &[StateIndex] {
        self.env.states()
    }

    fn delays(&self) -> &[u64] {
        &self.delays
    }

    fn models(&self) -> Option<&[ArmModel]> {
        None
    }

    fn begin_step(&mut self, _t: u64) -> Result<bool, EnvError> {
        Ok(false)
    }

    fn step(&mut self, actions: &[Action], rewards: &mut Vec<f64>) -> Result<(), ModelError> {
        self.env.step_into(actions, rewards)?;
        self.delays = self.env.aoi();
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sensing(#[from] SensingError),
}

/// A fresh environment instance for one (policy, run) cell.
pub fn build_environment(spec: &EnvSpec, seed: u64) -> Result<Box<dyn Environment>, BuildError> {
    spec.validate()?;
    if spec.name == EnvKind::Sensing {
        let env = SensingEnv::new(spec.arm_categories(), spec.budget_m, &spec.sensing, seed)?;
        Ok(Box::new(SensingAdapter::new(env)))
    } else {
        Ok(Box::new(BenchmarkEnv::from_spec(spec, seed)?))
    }
}
