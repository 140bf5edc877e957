//! Top-M by exact Whittle indices of the true models.

use serde_json::json;

use super::{Observation, Result, Scheduler, Transition};
use crate::model::{Action, ArmModel};
use crate::rng::RngStream;
use crate::whittle::{oracle_policy, solve_tables, WhittleOptions, WhittleTable};

#[derive(Debug, Clone)]
pub struct OraclePolicy {
    tables: Vec<WhittleTable>,
    opts: WhittleOptions,
}

impl OraclePolicy {
    pub fn new(models: &[ArmModel], opts: WhittleOptions) -> Result<Self> {
        Ok(Self {
            tables: solve_tables(models, &opts)?,
            opts,
        })
    }

    pub fn from_tables(tables: Vec<WhittleTable>) -> Self {
        Self {
            tables,
            opts: WhittleOptions::default(),
        }
    }

    pub fn tables(&self) -> &[WhittleTable] {
        &self.tables
    }
}

impl Scheduler for OraclePolicy {
    fn select(&mut self, obs: &Observation<'_>, rng: &mut RngStream) -> Vec<Action> {
        oracle_policy(&self.tables, obs.states, obs.budget, rng).expect("one table per arm")
    }

    fn observe(&mut self, _tr: &Transition<'_>) {}

    fn on_dynamics_change(&mut self, models: Option<&[ArmModel]>) -> Result<()> {
        if let Some(models) = models {
            self.tables = solve_tables(models, &self.opts)?;
        }
        Ok(())
    }

    fn stored_values(&self) -> usize {
        self.tables.iter().map(WhittleTable::n_states).sum()
    }

    fn snapshot(&self) -> serde_json::Value {
        json!({ "indices": self.tables.iter().map(|t| &t.indices).collect::<Vec<_>>() })
    }
}
