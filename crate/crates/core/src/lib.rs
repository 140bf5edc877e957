//! Restless multi-armed bandit scheduling.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: per-arm MDPs and the coupled ensemble step
//! - [`envs`]: the built-in benchmark ensembles
//! - [`sensing`]: temperature sensors, edge smoothing, sink extrapolation and AoII
//! - [`environment`]: the uniform stepping interface the harness drives
//! - [`whittle`]: exact Whittle indices by relative value iteration and bisection
//! - [`select`]: top-M selection with random tie-breaking
//! - [`policies`]: WIQL-UCB and every comparison scheduler
//! - [`harness`]: seeded multi-run experiments and their CSV/JSON outputs

// Parameter checks use `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod environment;
pub mod envs;
pub mod harness;
pub mod model;
pub mod policies;
pub mod rng;
pub mod select;
pub mod sensing;
pub mod whittle;

pub use environment::{build_environment, BenchmarkEnv, Environment};
pub use envs::{EnvError, EnvKind, EnvSpec};
pub use harness::{run_experiment, ExperimentConfig, HarnessError};
pub use model::{Action, ArmEnsemble, ArmModel, ModelError, RewardTable, StateIndex, TransitionKernel};
pub use policies::{PolicyConfig, PolicyError, Scheduler};
pub use rng::RngStream;
pub use select::top_m_by_score;
pub use whittle::{WhittleError, WhittleTable};
