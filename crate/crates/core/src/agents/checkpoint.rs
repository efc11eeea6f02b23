//! Policy checkpoints in the same JSON container format as dynamics models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ppo::{Head, PpoAgent, PpoConfig};
use super::sac::{SacAgent, SacConfig};
use super::{Agent, RandomAgent};
use crate::dynamics::checkpoint::MlpDto;
use crate::envs::ActionSpec;
use crate::error::{Error, Result};
use crate::numerics::linalg::Vector;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionSpecDto {
    Discrete { n: usize },
    Continuous { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpecDto {
    pub fn from_spec(spec: &ActionSpec) -> Self {
        match spec {
            ActionSpec::Discrete { n } => ActionSpecDto::Discrete { n: *n },
            ActionSpec::Continuous { low, high } => ActionSpecDto::Continuous {
                low: low.iter().copied().collect(),
                high: high.iter().copied().collect(),
            },
        }
    }

    pub fn to_spec(&self) -> Result<ActionSpec> {
        match self {
            ActionSpecDto::Discrete { n } => {
                if *n == 0 {
                    return Err(Error::Checkpoint("empty discrete action set".into()));
                }
                Ok(ActionSpec::Discrete { n: *n })
            }
            ActionSpecDto::Continuous { low, high } => {
                if low.len() != high.len() || low.is_empty() {
                    return Err(Error::Checkpoint("malformed action bounds".into()));
                }
                Ok(ActionSpec::Continuous {
                    low: Vector::from_vec(low.clone()),
                    high: Vector::from_vec(high.clone()),
                })
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyCheckpoint {
    PpoDiscrete {
        config: PpoConfig,
        n_actions: usize,
        net: MlpDto,
    },
    PpoContinuous {
        config: PpoConfig,
        low: Vec<f64>,
        high: Vec<f64>,
        net: MlpDto,
        log_std: Vec<f64>,
    },
    Sac {
        config: SacConfig,
        low: Vec<f64>,
        high: Vec<f64>,
        actor: MlpDto,
        critic: MlpDto,
        target: MlpDto,
        log_alpha: f64,
    },
    Random {
        action_spec: ActionSpecDto,
    },
}

impl PolicyCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Checkpoint(format!("serialize policy: {e}")))?;
        std::fs::write(path, text).map_err(Error::from)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(Error::from)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("parse policy checkpoint: {e}")))
    }

    pub fn restore(&self) -> Result<Box<dyn Agent>> {
        match self {
            PolicyCheckpoint::PpoDiscrete {
                config,
                n_actions,
                net,
            } => {
                let net = net.to_mlp()?;
                if net.output_dim() != n_actions + 1 {
                    return Err(Error::Checkpoint(
                        "policy head size does not match the action count".into(),
                    ));
                }
                Ok(Box::new(PpoAgent::from_parts(
                    net,
                    Vec::new(),
                    Head::Discrete { n: *n_actions },
                    config.clone(),
                )))
            }
            PolicyCheckpoint::PpoContinuous {
                config,
                low,
                high,
                net,
                log_std,
            } => {
                if low.len() != high.len() || low.len() != log_std.len() {
                    return Err(Error::Checkpoint("malformed action bounds".into()));
                }
                let net = net.to_mlp()?;
                if net.output_dim() != low.len() + 1 {
                    return Err(Error::Checkpoint(
                        "policy head size does not match the action dimension".into(),
                    ));
                }
                Ok(Box::new(PpoAgent::from_parts(
                    net,
                    log_std.clone(),
                    Head::Continuous {
                        low: Vector::from_vec(low.clone()),
                        high: Vector::from_vec(high.clone()),
                    },
                    config.clone(),
                )))
            }
            PolicyCheckpoint::Sac {
                config,
                low,
                high,
                actor,
                critic,
                target,
                log_alpha,
            } => {
                if low.len() != high.len() || low.is_empty() {
                    return Err(Error::Checkpoint("malformed action bounds".into()));
                }
                let actor = actor.to_mlp()?;
                if actor.output_dim() != 2 * low.len() {
                    return Err(Error::Checkpoint(
                        "actor head size does not match the action dimension".into(),
                    ));
                }
                Ok(Box::new(SacAgent::from_parts(
                    actor,
                    critic.to_mlp()?,
                    target.to_mlp()?,
                    *log_alpha,
                    Vector::from_vec(low.clone()),
                    Vector::from_vec(high.clone()),
                    config.clone(),
                )))
            }
            PolicyCheckpoint::Random { action_spec } => {
                Ok(Box::new(RandomAgent::new(action_spec.to_spec()?)))
            }
        }
    }
}

pub(crate) fn ppo_checkpoint(agent: &PpoAgent) -> PolicyCheckpoint {
    match &agent.head {
        Head::Discrete { n } => PolicyCheckpoint::PpoDiscrete {
            config: agent.config.clone(),
            n_actions: *n,
            net: MlpDto::from_mlp(&agent.net),
        },
        Head::Continuous { low, high } => PolicyCheckpoint::PpoContinuous {
            config: agent.config.clone(),
            low: low.iter().copied().collect(),
            high: high.iter().copied().collect(),
            net: MlpDto::from_mlp(&agent.net),
            log_std: agent.log_std.clone(),
        },
    }
}

pub(crate) fn sac_checkpoint(agent: &SacAgent) -> PolicyCheckpoint {
    PolicyCheckpoint::Sac {
        config: agent.config.clone(),
        low: agent.low.iter().copied().collect(),
        high: agent.high.iter().copied().collect(),
        actor: MlpDto::from_mlp(&agent.actor),
        critic: MlpDto::from_mlp(&agent.critic),
        target: MlpDto::from_mlp(&agent.target),
        log_alpha: agent.log_alpha,
    }
}
