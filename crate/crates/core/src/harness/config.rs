//! Experiment configuration: a single TOML file fully determines a run.
//! Parsed configs are re-serialized with every default materialized, so the
//! copy written next to the results is complete provenance.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{Agent, PpoAgent, PpoConfig, RandomAgent, SacAgent, SacConfig};
use crate::dynamics::{
    DeepEnsembleModel, DeepKernelConfig, DeepKernelModel, DynamicsModel, EnsembleConfig, GpConfig,
    GpModel,
};
use crate::envs::maze::MazeEnv;
use crate::envs::mountain_car::{MountainCarEnv, NoiseMode};
use crate::envs::unichain::UnichainEnv;
use crate::envs::{ActionSpec, Environment};
use crate::error::{Error, Result};
use crate::intrinsic::BonusKind;
use crate::planner::{PlannerConfig, PlannerMode};
use crate::numerics::rng::Rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Unichain {
        length: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_limit: Option<usize>,
    },
    MountainCar {
        noise: NoiseMode,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_limit: Option<usize>,
    },
    Maze {
        layout: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        step_limit: Option<usize>,
    },
}

impl EnvSpec {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvSpec::Unichain { length, step_limit } => match step_limit {
                Some(limit) => Box::new(UnichainEnv::with_step_limit(*length, *limit)?),
                None => Box::new(UnichainEnv::new(*length)?),
            },
            EnvSpec::MountainCar { noise, step_limit } => match step_limit {
                Some(limit) => Box::new(MountainCarEnv::with_step_limit(noise.clone(), *limit)),
                None => Box::new(MountainCarEnv::new(noise.clone())),
            },
            EnvSpec::Maze { layout, step_limit } => {
                let env = MazeEnv::from_layout_name(layout).map_err(|e| Error::InvalidConfig {
                    field: "env.layout".into(),
                    message: e.to_string(),
                })?;
                Box::new(match step_limit {
                    Some(limit) => env.with_step_limit(*limit),
                    None => env,
                })
            }
        })
    }

    pub fn has_continuous_actions(&self) -> bool {
        matches!(self, EnvSpec::Maze { .. })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Gp {
        #[serde(default)]
        config: GpConfig,
    },
    DeepKernel {
        #[serde(default)]
        config: DeepKernelConfig,
    },
    Ensemble {
        #[serde(default)]
        config: EnsembleConfig,
    },
}

impl ModelSpec {
    /// Input is encoded state plus encoded action; output is reward plus
    /// encoded next state.
    pub fn build(&self, in_dim: usize, out_dim: usize, rng: &Rng) -> Box<dyn DynamicsModel> {
        match self {
            ModelSpec::Gp { config } => Box::new(GpModel::new(in_dim, out_dim, config.clone())),
            ModelSpec::DeepKernel { config } => {
                Box::new(DeepKernelModel::new(in_dim, out_dim, config.clone(), rng))
            }
            ModelSpec::Ensemble { config } => {
                Box::new(DeepEnsembleModel::new(in_dim, out_dim, config.clone(), rng))
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentSpec {
    Ppo {
        #[serde(default)]
        config: PpoConfig,
    },
    Sac {
        #[serde(default)]
        config: SacConfig,
    },
    Random,
}

impl AgentSpec {
    pub fn build(&self, env: &dyn Environment, rng: &Rng) -> Result<Box<dyn Agent>> {
        let state_dim = env.encoded_bounds().0.len();
        Ok(match self {
            AgentSpec::Ppo { config } => match env.action_spec() {
                ActionSpec::Discrete { n } => {
                    Box::new(PpoAgent::discrete(state_dim, *n, config.clone(), rng))
                }
                ActionSpec::Continuous { low, high } => Box::new(PpoAgent::continuous(
                    state_dim,
                    low.clone(),
                    high.clone(),
                    config.clone(),
                    rng,
                )),
            },
            AgentSpec::Sac { config } => match env.action_spec() {
                ActionSpec::Continuous { low, high } => Box::new(SacAgent::new(
                    state_dim,
                    low.clone(),
                    high.clone(),
                    config.clone(),
                    rng,
                )),
                ActionSpec::Discrete { .. } => {
                    return Err(Error::InvalidConfig {
                        field: "agent.kind".into(),
                        message: "sac requires a continuous action space".into(),
                    })
                }
            },
            AgentSpec::Random => Box::new(RandomAgent::new(env.action_spec().clone())),
        })
    }
}

fn default_name() -> String {
    "experiment".into()
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub env: EnvSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    pub agent: AgentSpec,
    #[serde(default)]
    pub planner: PlannerConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::InvalidConfig {
                field: "name".into(),
                message: "must be a non-empty path-safe name".into(),
            });
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig {
                field: "seeds".into(),
                message: "at least one seed required".into(),
            });
        }
        let distinct: HashSet<u64> = self.seeds.iter().copied().collect();
        if distinct.len() != self.seeds.len() {
            return Err(Error::InvalidConfig {
                field: "seeds".into(),
                message: "seeds must be distinct".into(),
            });
        }
        self.env.build()?;
        self.planner.validate().map_err(|e| match e {
            Error::InvalidConfig { field, message } => Error::InvalidConfig {
                field: format!("planner.{field}"),
                message,
            },
            other => other,
        })?;
        let bonus = &self.planner.bonus;
        if matches!(bonus.kind, BonusKind::Entropy | BonusKind::Eig) && bonus.jsd_samples == 0 {
            return Err(Error::InvalidConfig {
                field: "planner.bonus.jsd_samples".into(),
                message: "sampled measures need at least one draw".into(),
            });
        }
        let model_needed = match self.planner.mode {
            PlannerMode::PtsBe | PlannerMode::PtsExtrinsicOnly => true,
            PlannerMode::BeRetrospective => bonus.kind != BonusKind::Count,
            PlannerMode::Vanilla => false,
        };
        if model_needed && self.model.is_none() {
            return Err(Error::InvalidConfig {
                field: "model".into(),
                message: format!("planner mode {:?} needs a [model] section", self.planner.mode),
            });
        }
        if matches!(self.agent, AgentSpec::Sac { .. }) && !self.env.has_continuous_actions() {
            return Err(Error::InvalidConfig {
                field: "agent.kind".into(),
                message: "sac requires a continuous action space".into(),
            });
        }
        Ok(())
    }

    /// Full config with all defaults materialized, for provenance.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig {
            field: "config".into(),
            message: e.to_string(),
        })
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig {
        field: "config".into(),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

pub fn layout_names() -> &'static [&'static str] {
    &["open", "u_shape", "double_u", "obstacles"]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        r#"
            seeds = [0, 1]
            [env]
            kind = "unichain"
            length = 12
            [agent]
            kind = "ppo"
            [model]
            kind = "ensemble"
        "#
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config = parse_config(minimal()).unwrap();
        assert_eq!(config.seeds, vec![0, 1]);
        assert_eq!(config.planner.total_steps, 400);
        assert_eq!(config.planner.warmup_steps, 10);
        assert!(matches!(
            config.model,
            Some(ModelSpec::Ensemble { ref config }) if config.members == 5
        ));
    }

    #[test]
    fn materialized_toml_reparses_identically() {
        let config = parse_config(minimal()).unwrap();
        let full = config.to_toml().unwrap();
        let again = parse_config(&full).unwrap();
        assert_eq!(config.seeds, again.seeds);
        assert_eq!(config.planner.policy_period, again.planner.policy_period);
        assert_eq!(full, again.to_toml().unwrap());
    }

    #[test]
    fn duplicate_seeds_are_rejected_with_field_path() {
        let text = minimal().replace("[0, 1]", "[3, 3]");
        let err = parse_config(&text).unwrap_err();
        match err {
            Error::InvalidConfig { field, .. } => assert_eq!(field, "seeds"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_top_level_key_is_rejected() {
        let text = format!("banana = 1\n{}", minimal());
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn missing_model_for_imagination_mode_names_the_field() {
        let text = r#"
            [env]
            kind = "unichain"
            length = 12
            [agent]
            kind = "ppo"
        "#;
        let err = parse_config(text).unwrap_err();
        match err {
            Error::InvalidConfig { field, .. } => assert_eq!(field, "model"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn sac_on_discrete_env_is_rejected() {
        let text = minimal().replace("kind = \"ppo\"", "kind = \"sac\"");
        let err = parse_config(&text).unwrap_err();
        match err {
            Error::InvalidConfig { field, .. } => assert_eq!(field, "agent.kind"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn mountain_car_noise_modes_round_trip() {
        let text = r#"
            [env]
            kind = "mountain_car"
            [env.noise]
            mode = "heteroskedastic"
            [agent]
            kind = "random"
            [model]
            kind = "ensemble"
        "#;
        let config = parse_config(text).unwrap();
        match &config.env {
            EnvSpec::MountainCar { noise, .. } => match noise {
                NoiseMode::Heteroskedastic { sigma_base, .. } => {
                    assert_eq!(*sigma_base, 0.005);
                }
                other => panic!("wrong noise {other:?}"),
            },
            other => panic!("wrong env {other:?}"),
        }
        let env = config.env.build().unwrap();
        assert_eq!(env.name(), "mountain_car");
    }

    #[test]
    fn every_builtin_layout_builds() {
        for name in layout_names() {
            let spec = EnvSpec::Maze {
                layout: (*name).into(),
                step_limit: None,
            };
            assert!(spec.build().is_ok(), "layout {name} failed");
        }
    }

    #[test]
    fn agents_are_sized_by_the_environment() {
        let config = parse_config(minimal()).unwrap();
        let mut env = config.env.build().unwrap();
        let agent = config.agent.build(env.as_ref(), &Rng::new(0)).unwrap();
        let mut rng = Rng::new(1);
        let state = env.reset(&mut rng);
        let sample = agent.act(&env.encode_state(&state), &mut rng, false).unwrap();
        assert!(env.step(&sample.action, &mut rng).is_ok());
    }
}
