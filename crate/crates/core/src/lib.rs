//! Model-based reinforcement learning with Bayesian dynamics models.
//!
//! The library couples three ingredients: dynamics models that expose
//! calibrated predictive uncertainty (exact GPs, deep-kernel GPs, deep
//! ensembles), intrinsic rewards derived from that uncertainty (expected
//! information gain and friends), and a planning loop that trains a policy
//! on imagined rollouts augmented with those bonuses. A small experiment
//! harness runs seeded replications on sparse-reward toy environments and
//! writes deterministic trace/aggregate CSVs.

pub mod agents;
pub mod dynamics;
pub mod envs;
pub mod error;
pub mod harness;
pub mod intrinsic;
pub mod numerics;
pub mod planner;

pub use error::{Error, Result};
pub use numerics::linalg::{Matrix, Vector};
pub use numerics::rng::Rng;
