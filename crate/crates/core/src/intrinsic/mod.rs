//! Intrinsic-reward family: prediction error, variance, visitation counts,
//! predictive entropy, expected information gain (EIG), and a retrospective
//! probe-set information gain.
//!
//! The measures themselves carry no scaling; [`scale`] applies the `eta`
//! factor and its decay schedule, so a measure value is reusable across
//! schedules without double-scaling.

pub mod counter;
pub mod measures;
pub mod probe;

pub use counter::VisitCounter;
pub use measures::{entropy_bonus, eig_bonus, pred_error_bonus, variance_bonus};
pub use probe::ig_probe;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BonusKind {
    PredError,
    Variance,
    Count,
    Entropy,
    Eig,
}

/// Decay schedule for the intrinsic scaling factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum Decay {
    Constant,
    Linear { t_end: f64 },
}

fn default_eta() -> f64 {
    1.0
}
fn default_jsd_samples() -> usize {
    32
}
fn default_state_bins() -> usize {
    16
}
fn default_action_bins() -> usize {
    8
}
fn default_true() -> bool {
    true
}
fn default_decay() -> Decay {
    Decay::Constant
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BonusSpec {
    pub kind: BonusKind,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_decay")]
    pub decay: Decay,
    /// Monte-Carlo draws per mixture member for entropy/EIG estimates.
    #[serde(default = "default_jsd_samples")]
    pub jsd_samples: usize,
    /// Count-bonus discretization: bins per encoded state dim.
    #[serde(default = "default_state_bins")]
    pub count_state_bins: usize,
    /// Bins per continuous action dim (discrete actions are exact cells).
    #[serde(default = "default_action_bins")]
    pub count_action_bins: usize,
    /// Variance bonus: keep only the disagreement of member means.
    #[serde(default = "default_true")]
    pub epistemic_only: bool,
}

impl BonusSpec {
    pub fn new(kind: BonusKind) -> Self {
        Self {
            kind,
            eta: default_eta(),
            decay: default_decay(),
            jsd_samples: default_jsd_samples(),
            count_state_bins: default_state_bins(),
            count_action_bins: default_action_bins(),
            epistemic_only: default_true(),
        }
    }

    pub fn with_eta(mut self, eta: f64) -> Self {
        self.eta = eta;
        self
    }

    pub fn with_decay(mut self, decay: Decay) -> Self {
        self.decay = decay;
        self
    }
}

/// Apply the scaling factor and decay schedule to a raw measure value.
pub fn scale(bonus: f64, t: usize, spec: &BonusSpec) -> f64 {
    let decay = match spec.decay {
        Decay::Constant => 1.0,
        Decay::Linear { t_end } => (1.0 - t as f64 / t_end).max(0.0),
    };
    spec.eta * decay * bonus
}
