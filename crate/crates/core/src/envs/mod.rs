//! Sparse-reward toy environments with a shared stepping interface.
//!
//! Environments expose raw states (used for traces and coverage grids) and
//! an encoded view (min-max normalized, used by models and policies).

pub mod maze;
pub mod mountain_car;
pub mod unichain;

pub use maze::MazeEnv;
pub use mountain_car::{MountainCarEnv, NoiseMode};
pub use unichain::UnichainEnv;

use crate::error::{Error, Result};
use crate::numerics::linalg::Vector;
use crate::numerics::rng::Rng;

/// An agent action: a choice index or a bounded force/control vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vector),
}

/// Action-space description, also responsible for the numeric encoding fed
/// to models (discrete choices become a scalar in [-1, 1]).
#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpec {
    Discrete { n: usize },
    Continuous { low: Vector, high: Vector },
}

impl ActionSpec {
    /// Dimension of the encoded action vector.
    pub fn encoded_dim(&self) -> usize {
        match self {
            ActionSpec::Discrete { .. } => 1,
            ActionSpec::Continuous { low, .. } => low.len(),
        }
    }

    /// Dimension of a raw continuous action (1 for discrete spaces).
    pub fn action_dim(&self) -> usize {
        self.encoded_dim()
    }

    /// Encode an action into [-1, 1] per dimension. Continuous actions are
    /// clipped to their bounds first.
    pub fn encode(&self, action: &Action) -> Result<Vector> {
        match (self, action) {
            (ActionSpec::Discrete { n }, Action::Discrete(i)) => {
                if *i >= *n {
                    return Err(Error::InvalidAction(format!("index {i} out of {n}")));
                }
                let v = if *n <= 1 {
                    0.0
                } else {
                    2.0 * (*i as f64) / ((*n - 1) as f64) - 1.0
                };
                Ok(Vector::from_vec(vec![v]))
            }
            (ActionSpec::Continuous { low, high }, Action::Continuous(a)) => {
                if a.len() != low.len() {
                    return Err(Error::DimensionMismatch {
                        context: "ActionSpec::encode",
                        expected: low.len(),
                        got: a.len(),
                    });
                }
                Ok(Vector::from_fn(a.len(), |i, _| {
                    let x = a[i].clamp(low[i], high[i]);
                    min_max_encode(x, low[i], high[i])
                }))
            }
            _ => Err(Error::InvalidAction(
                "action kind does not match action space".into(),
            )),
        }
    }

    /// Uniform random action.
    pub fn sample_uniform(&self, rng: &mut Rng) -> Action {
        match self {
            ActionSpec::Discrete { n } => Action::Discrete(rng.usize_below(*n)),
            ActionSpec::Continuous { low, high } => Action::Continuous(Vector::from_fn(
                low.len(),
                |i, _| rng.uniform(low[i], high[i]),
            )),
        }
    }
}

/// Map `x` in `[lo, hi]` to `[-1, 1]`.
#[inline]
pub fn min_max_encode(x: f64, lo: f64, hi: f64) -> f64 {
    2.0 * (x - lo) / (hi - lo) - 1.0
}

/// Outcome of one environment step. `next_state` is raw; `done` covers both
/// task termination and hitting the episode step limit.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub next_state: Vector,
    pub reward: f64,
    pub done: bool,
}

/// One recorded interaction, stored with raw states.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vector,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vector,
    pub done: bool,
}

pub trait Environment {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn action_spec(&self) -> &ActionSpec;
    fn step_limit(&self) -> usize;

    fn reset(&mut self, rng: &mut Rng) -> Vector;
    fn step(&mut self, action: &Action, rng: &mut Rng) -> Result<StepResult>;

    /// Raw state into the model/policy input space.
    fn encode_state(&self, raw: &Vector) -> Vector;

    /// Per-dimension (lo, hi) bounds of the encoded state space.
    fn encoded_bounds(&self) -> (Vector, Vector);

    /// Discretization cell of a raw state, for coverage accounting.
    fn coverage_cell(&self, raw: &Vector) -> usize;

    /// Total number of coverage cells.
    fn coverage_cells(&self) -> usize;

    /// Short description of the coverage grid, recorded in run metadata.
    fn coverage_grid_desc(&self) -> String;

    /// Distance to the goal, when the task has a spatial goal.
    fn goal_distance(&self, _raw: &Vector) -> Option<f64> {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discrete_encoding_spans_unit_interval() {
        let spec = ActionSpec::Discrete { n: 3 };
        let vals: Vec<f64> = (0..3)
            .map(|i| spec.encode(&Action::Discrete(i)).unwrap()[0])
            .collect();
        assert_eq!(vals, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn discrete_encoding_rejects_out_of_range() {
        let spec = ActionSpec::Discrete { n: 3 };
        assert!(spec.encode(&Action::Discrete(3)).is_err());
    }

    #[test]
    fn continuous_encoding_clips() {
        let spec = ActionSpec::Continuous {
            low: Vector::from_vec(vec![-1.0, -1.0]),
            high: Vector::from_vec(vec![1.0, 1.0]),
        };
        let enc = spec
            .encode(&Action::Continuous(Vector::from_vec(vec![2.0, -0.5])))
            .unwrap();
        assert_eq!(enc[0], 1.0);
        assert_eq!(enc[1], -0.5);
    }

    #[test]
    fn kind_mismatch_is_invalid() {
        let spec = ActionSpec::Discrete { n: 2 };
        let a = Action::Continuous(Vector::from_vec(vec![0.0]));
        assert!(matches!(spec.encode(&a), Err(Error::InvalidAction(_))));
    }
}
