//! Policy-gradient learners: PPO (discrete and continuous) and SAC, plus a
//! uniform-random agent for probe-only runs.
//!
//! Agents act on encoded states and emit environment-space actions. Batches
//! carry a provenance tag so the planning loop can assert which data policy
//! gradients are computed from.

pub mod checkpoint;
pub mod ppo;
pub mod sac;

pub use checkpoint::PolicyCheckpoint;
pub use ppo::{gae_advantages, PpoAgent, PpoConfig};
pub use sac::{SacAgent, SacConfig};

use crate::envs::{Action, ActionSpec};
use crate::error::Result;
use crate::numerics::linalg::Vector;
use crate::numerics::rng::Rng;

/// Where a batch's transitions came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Real,
    Imagined,
}

/// One contiguous trajectory of transitions, encoded-state space.
#[derive(Debug, Clone, Default)]
pub struct Segment {
    pub states: Vec<Vector>,
    pub actions: Vec<Action>,
    /// Pre-squash Gaussian draws for continuous policies (needed to
    /// re-evaluate log-probs during updates).
    pub pre_squash: Vec<Option<Vector>>,
    pub log_probs: Vec<f64>,
    /// Augmented rewards the agent trains on (extrinsic + scaled bonus).
    pub rewards: Vec<f64>,
    pub rewards_ext: Vec<f64>,
    pub bonuses: Vec<f64>,
    pub next_states: Vec<Vector>,
    pub dones: Vec<bool>,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn push(
        &mut self,
        state: Vector,
        action: Action,
        pre_squash: Option<Vector>,
        log_prob: f64,
        reward_ext: f64,
        bonus: f64,
        next_state: Vector,
        done: bool,
    ) {
        self.states.push(state);
        self.actions.push(action);
        self.pre_squash.push(pre_squash);
        self.log_probs.push(log_prob);
        self.rewards.push(reward_ext + bonus);
        self.rewards_ext.push(reward_ext);
        self.bonuses.push(bonus);
        self.next_states.push(next_state);
        self.dones.push(done);
    }

    fn assert_consistent(&self) {
        let n = self.states.len();
        assert!(
            self.actions.len() == n
                && self.pre_squash.len() == n
                && self.log_probs.len() == n
                && self.rewards.len() == n
                && self.rewards_ext.len() == n
                && self.bonuses.len() == n
                && self.next_states.len() == n
                && self.dones.len() == n,
            "segment arrays out of step"
        );
    }
}

/// A set of trajectories for one policy update.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub provenance: Provenance,
    pub segments: Vec<Segment>,
}

impl RolloutBatch {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            provenance,
            segments: Vec::new(),
        }
    }

    pub fn push_segment(&mut self, segment: Segment) {
        segment.assert_consistent();
        if !segment.is_empty() {
            self.segments.push(segment);
        }
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total augmented return across the batch.
    pub fn augmented_return(&self) -> f64 {
        self.segments
            .iter()
            .flat_map(|s| s.rewards.iter())
            .sum()
    }

    pub fn extrinsic_return(&self) -> f64 {
        self.segments
            .iter()
            .flat_map(|s| s.rewards_ext.iter())
            .sum()
    }

    pub fn bonus_return(&self) -> f64 {
        self.segments.iter().flat_map(|s| s.bonuses.iter()).sum()
    }
}

/// A sampled action with the bookkeeping updates need.
#[derive(Debug, Clone)]
pub struct ActionSample {
    pub action: Action,
    pub log_prob: f64,
    pub pre_squash: Option<Vector>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateDiagnostics {
    pub policy_loss: f64,
    /// Value loss for PPO, critic loss for SAC.
    pub value_loss: f64,
    pub entropy: f64,
    /// Approximate KL between collection and updated policy (PPO only).
    pub kl: f64,
    /// Temperature after the update (SAC only).
    pub alpha: f64,
}

pub trait Agent {
    fn act(&self, state: &Vector, rng: &mut Rng, deterministic: bool) -> Result<ActionSample>;

    /// Run `epochs` passes (PPO) or `epochs` gradient steps (SAC) on the
    /// batch. Untrainable agents return a zeroed diagnostic.
    fn update(
        &mut self,
        batch: &RolloutBatch,
        epochs: usize,
        rng: &mut Rng,
    ) -> Result<UpdateDiagnostics>;

    fn trainable(&self) -> bool {
        true
    }

    fn checkpoint(&self) -> Result<PolicyCheckpoint>;
}

/// Uniform-random policy; never trains.
pub struct RandomAgent {
    spec: ActionSpec,
}

impl RandomAgent {
    pub fn new(spec: ActionSpec) -> Self {
        Self { spec }
    }
}

impl Agent for RandomAgent {
    fn act(&self, _state: &Vector, rng: &mut Rng, _deterministic: bool) -> Result<ActionSample> {
        let action = self.spec.sample_uniform(rng);
        let log_prob = match &self.spec {
            ActionSpec::Discrete { n } => -(*n as f64).ln(),
            ActionSpec::Continuous { low, high } => {
                -(0..low.len()).map(|i| (high[i] - low[i]).ln()).sum::<f64>()
            }
        };
        Ok(ActionSample {
            action,
            log_prob,
            pre_squash: None,
        })
    }

    fn update(
        &mut self,
        _batch: &RolloutBatch,
        _epochs: usize,
        _rng: &mut Rng,
    ) -> Result<UpdateDiagnostics> {
        Ok(UpdateDiagnostics::default())
    }

    fn trainable(&self) -> bool {
        false
    }

    fn checkpoint(&self) -> Result<PolicyCheckpoint> {
        Ok(PolicyCheckpoint::Random {
            action_spec: checkpoint::ActionSpecDto::from_spec(&self.spec),
        })
    }
}
