//! Deterministic chain of L states with a small reward trap at the near end
//! and the real reward at the far end.
//!
//! Actions shift the index left/stay/right; moves off either end are no-ops.
//! Visiting index 0 pays 0.001, visiting index L-1 pays 1.0 (keyed on the
//! state the action is taken from). Episodes only end at the step limit.

use super::{Action, ActionSpec, Environment, StepResult};
use crate::error::{Error, Result};
use crate::numerics::linalg::Vector;
use crate::numerics::rng::Rng;

pub const DEFAULT_STEP_LIMIT: usize = 400;
/// Reset drops the agent next to the trap, not in it.
pub const START_INDEX: usize = 1;

#[derive(Debug, Clone)]
pub struct UnichainEnv {
    length: usize,
    spec: ActionSpec,
    step_limit: usize,
    index: usize,
    steps: usize,
}

impl UnichainEnv {
    pub fn new(length: usize) -> Result<Self> {
        Self::with_step_limit(length, DEFAULT_STEP_LIMIT)
    }

    pub fn with_step_limit(length: usize, step_limit: usize) -> Result<Self> {
        if length < 3 {
            return Err(Error::InvalidConfig {
                field: "env.length".into(),
                message: format!("chain needs at least 3 states, got {length}"),
            });
        }
        Ok(Self {
            length,
            spec: ActionSpec::Discrete { n: 3 },
            step_limit,
            index: START_INDEX,
            steps: 0,
        })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Test/probe hook.
    pub fn set_index(&mut self, index: usize) {
        assert!(index < self.length);
        self.index = index;
    }

    fn reward_at(&self, index: usize) -> f64 {
        if index == 0 {
            0.001
        } else if index == self.length - 1 {
            1.0
        } else {
            0.0
        }
    }

    fn raw(&self) -> Vector {
        Vector::from_vec(vec![self.index as f64])
    }
}

impl Environment for UnichainEnv {
    fn name(&self) -> &'static str {
        "unichain"
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn action_spec(&self) -> &ActionSpec {
        &self.spec
    }

    fn step_limit(&self) -> usize {
        self.step_limit
    }

    fn reset(&mut self, _rng: &mut Rng) -> Vector {
        self.index = START_INDEX;
        self.steps = 0;
        self.raw()
    }

    fn step(&mut self, action: &Action, _rng: &mut Rng) -> Result<StepResult> {
        let shift: i64 = match action {
            Action::Discrete(0) => -1,
            Action::Discrete(1) => 0,
            Action::Discrete(2) => 1,
            other => {
                return Err(Error::InvalidAction(format!(
                    "unichain takes discrete actions 0..3, got {other:?}"
                )))
            }
        };
        // Reward is keyed on the state the action is taken from.
        let reward = self.reward_at(self.index);
        let moved = self.index as i64 + shift;
        if moved >= 0 && (moved as usize) < self.length {
            self.index = moved as usize;
        }
        self.steps += 1;
        Ok(StepResult {
            next_state: self.raw(),
            reward,
            done: self.steps >= self.step_limit,
        })
    }

    fn encode_state(&self, raw: &Vector) -> Vector {
        Vector::from_vec(vec![raw[0] / (self.length - 1) as f64])
    }

    fn encoded_bounds(&self) -> (Vector, Vector) {
        (Vector::from_vec(vec![0.0]), Vector::from_vec(vec![1.0]))
    }

    fn coverage_cell(&self, raw: &Vector) -> usize {
        (raw[0] as usize).min(self.length - 1)
    }

    fn coverage_cells(&self) -> usize {
        self.length
    }

    fn coverage_grid_desc(&self) -> String {
        format!("{} chain states", self.length)
    }
}
