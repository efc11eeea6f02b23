//! Soft actor-critic for continuous actions: a tanh-squashed Gaussian actor,
//! a single critic with a Polyak-averaged target copy, and automatic
//! temperature tuning toward a target entropy.
//!
//! Actor rows `0..k` are means, rows `k..2k` raw log standard deviations
//! squashed into `[-5, 2]`. The critic consumes `[state; action]` with the
//! action in the normalized `[-1, 1]` box.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{ActionSample, Agent, PolicyCheckpoint, RolloutBatch, UpdateDiagnostics};
use crate::envs::Action;
use crate::error::{Error, Result};
use crate::numerics::adam::Adam;
use crate::numerics::gaussian::LOG_2PI;
use crate::numerics::linalg::{Matrix, Vector};
use crate::numerics::mlp::{clamp_log_var, Activation, Mlp, MlpGrads};
use crate::numerics::rng::Rng;

const SQUASH_EPS: f64 = 1e-6;
pub(crate) const LOG_STD_LO: f64 = -5.0;
pub(crate) const LOG_STD_HI: f64 = 2.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub lr: f64,
    pub gamma: f64,
    /// Polyak averaging coefficient for the target critic.
    pub tau: f64,
    pub batch: usize,
    pub replay_capacity: usize,
    pub hidden: Vec<usize>,
    pub init_alpha: f64,
    /// Target policy entropy; defaults to minus the action dimension.
    pub h_target: Option<f64>,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            gamma: 0.99,
            tau: 0.005,
            batch: 128,
            replay_capacity: 100_000,
            hidden: vec![64, 64],
            init_alpha: 1.0,
            h_target: None,
        }
    }
}

#[derive(Debug, Clone)]
struct ReplayItem {
    s: Vector,
    /// Action in the normalized box.
    a: Vector,
    r: f64,
    s2: Vector,
    done: bool,
}

pub struct SacAgent {
    pub(crate) actor: Mlp,
    pub(crate) critic: Mlp,
    pub(crate) target: Mlp,
    pub(crate) log_alpha: f64,
    pub(crate) low: Vector,
    pub(crate) high: Vector,
    pub(crate) config: SacConfig,
    replay: VecDeque<ReplayItem>,
    actor_optim: Adam,
    critic_optim: Adam,
    alpha_optim: Adam,
}

/// Entropy-corrected one-step target; terminal transitions bootstrap nothing.
pub(crate) fn bellman_target(
    r: f64,
    done: bool,
    gamma: f64,
    q_next: f64,
    alpha: f64,
    lp_next: f64,
) -> f64 {
    if done {
        r
    } else {
        r + gamma * (q_next - alpha * lp_next)
    }
}

/// Gradient of `E[-alpha*(log_prob + h_target)]` with respect to `log_alpha`.
pub(crate) fn alpha_grad(log_alpha: f64, mean_lp: f64, h_target: f64) -> f64 {
    -log_alpha.exp() * (mean_lp + h_target)
}

fn stack(s: &Matrix, a: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(s.nrows() + a.nrows(), s.ncols());
    out.rows_mut(0, s.nrows()).copy_from(s);
    out.rows_mut(s.nrows(), a.nrows()).copy_from(a);
    out
}

/// Actor head for a batch: means, clamped log-stds, and the clamp derivative.
struct ActorHead {
    mu: Matrix,
    ls: Matrix,
    dls: Matrix,
}

fn actor_head(out: &Matrix, k: usize) -> ActorHead {
    let b = out.ncols();
    let mut ls = Matrix::zeros(k, b);
    let mut dls = Matrix::zeros(k, b);
    for c in 0..b {
        for d in 0..k {
            let (v, dv) = clamp_log_var(out[(k + d, c)], LOG_STD_LO, LOG_STD_HI);
            ls[(d, c)] = v;
            dls[(d, c)] = dv;
        }
    }
    ActorHead {
        mu: out.rows(0, k).into_owned(),
        ls,
        dls,
    }
}

/// Squashed log-prob of `u = mu + sigma*z` per column, plus `u` and
/// `a = tanh(u)` themselves.
struct SampledActions {
    a: Matrix,
    lp: Vec<f64>,
}

fn sample_actions(head: &ActorHead, z: &Matrix, low: &Vector, high: &Vector) -> SampledActions {
    let (k, b) = (head.mu.nrows(), head.mu.ncols());
    let mut a = Matrix::zeros(k, b);
    let mut lp = vec![0.0; b];
    for c in 0..b {
        for d in 0..k {
            let sigma = head.ls[(d, c)].exp();
            let ud = head.mu[(d, c)] + sigma * z[(d, c)];
            let t = ud.tanh();
            a[(d, c)] = t;
            let scale = 0.5 * (high[d] - low[d]);
            lp[c] += -0.5 * LOG_2PI
                - head.ls[(d, c)]
                - 0.5 * z[(d, c)] * z[(d, c)]
                - (scale * (1.0 - t * t) + SQUASH_EPS).ln();
        }
    }
    SampledActions { a, lp }
}

/// Mean squared Bellman error and critic gradients; targets are constants.
pub(crate) fn critic_loss_and_grads(
    critic: &Mlp,
    s: &Matrix,
    a: &Matrix,
    targets: &[f64],
) -> (f64, MlpGrads) {
    let b = targets.len();
    let inv_b = 1.0 / b as f64;
    let input = stack(s, a);
    let (q, tape) = critic.forward(&input);
    let mut grad_out = Matrix::zeros(1, b);
    let mut loss = 0.0;
    for c in 0..b {
        let err = q[(0, c)] - targets[c];
        loss += err * err * inv_b;
        grad_out[(0, c)] = 2.0 * err * inv_b;
    }
    let (grads, _) = critic.backward(&tape, &grad_out);
    (loss, grads)
}

/// Reparameterized actor objective `E[alpha*log_prob - Q(s, a)]` with
/// gradients through both the log-prob and the critic input. `z` holds the
/// frozen standard-normal draws, one column per sample.
pub(crate) fn actor_loss_and_grads(
    actor: &Mlp,
    critic: &Mlp,
    s: &Matrix,
    z: &Matrix,
    alpha: f64,
    low: &Vector,
    high: &Vector,
) -> (f64, MlpGrads, f64) {
    let b = s.ncols();
    let k = low.len();
    let inv_b = 1.0 / b as f64;
    let (out, tape) = actor.forward(s);
    let head = actor_head(&out, k);
    let sampled = sample_actions(&head, z, low, high);

    let input = stack(s, &sampled.a);
    let (q, critic_tape) = critic.forward(&input);
    let neg_inv_b = Matrix::from_element(1, b, -inv_b);
    let (_, input_grad) = critic.backward(&critic_tape, &neg_inv_b);

    let mut loss = 0.0;
    let mut mean_lp = 0.0;
    let mut grad_out = Matrix::zeros(out.nrows(), b);
    for c in 0..b {
        loss += (alpha * sampled.lp[c] - q[(0, c)]) * inv_b;
        mean_lp += sampled.lp[c] * inv_b;
        for d in 0..k {
            let t = sampled.a[(d, c)];
            let scale = 0.5 * (high[d] - low[d]);
            let jac_u = 2.0 * scale * t * (1.0 - t * t) / (scale * (1.0 - t * t) + SQUASH_EPS);
            // dL/du: log-prob Jacobian term plus the critic path through tanh.
            let du = alpha * inv_b * jac_u + input_grad[(s.nrows() + d, c)] * (1.0 - t * t);
            let sigma = head.ls[(d, c)].exp();
            grad_out[(d, c)] = du;
            grad_out[(k + d, c)] =
                (du * sigma * z[(d, c)] - alpha * inv_b) * head.dls[(d, c)];
        }
    }
    let (grads, _) = actor.backward(&tape, &grad_out);
    (loss, grads, mean_lp)
}

fn polyak_update(target: &mut Mlp, online: &Mlp, tau: f64) {
    for (t, o) in target.params_mut().zip(online.params()) {
        *t = (1.0 - tau) * *t + tau * o;
    }
}

impl SacAgent {
    pub fn new(state_dim: usize, low: Vector, high: Vector, config: SacConfig, rng: &Rng) -> Self {
        assert_eq!(low.len(), high.len());
        let k = low.len();
        let mut actor_dims = vec![state_dim];
        actor_dims.extend_from_slice(&config.hidden);
        actor_dims.push(2 * k);
        let mut critic_dims = vec![state_dim + k];
        critic_dims.extend_from_slice(&config.hidden);
        critic_dims.push(1);
        let mut actor_init = rng.stream("sac_actor_init");
        let mut critic_init = rng.stream("sac_critic_init");
        let actor = Mlp::new(&actor_dims, Activation::Relu, &mut actor_init);
        let critic = Mlp::new(&critic_dims, Activation::Relu, &mut critic_init);
        let target = critic.clone();
        let actor_optim = Adam::new(actor.param_count());
        let critic_optim = Adam::new(critic.param_count());
        Self {
            log_alpha: config.init_alpha.max(1e-12).ln(),
            actor,
            critic,
            target,
            low,
            high,
            config,
            replay: VecDeque::new(),
            actor_optim,
            critic_optim,
            alpha_optim: Adam::new(1),
        }
    }

    pub(crate) fn from_parts(
        actor: Mlp,
        critic: Mlp,
        target: Mlp,
        log_alpha: f64,
        low: Vector,
        high: Vector,
        config: SacConfig,
    ) -> Self {
        let actor_optim = Adam::new(actor.param_count());
        let critic_optim = Adam::new(critic.param_count());
        Self {
            actor,
            critic,
            target,
            log_alpha,
            low,
            high,
            config,
            replay: VecDeque::new(),
            actor_optim,
            critic_optim,
            alpha_optim: Adam::new(1),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    fn h_target(&self) -> f64 {
        self.config.h_target.unwrap_or(-(self.low.len() as f64))
    }

    fn encode_action(&self, action: &Action) -> Result<Vector> {
        let Action::Continuous(v) = action else {
            return Err(Error::InvalidAction(
                "soft actor-critic requires continuous actions".into(),
            ));
        };
        Ok(Vector::from_fn(self.low.len(), |d, _| {
            let scale = 0.5 * (self.high[d] - self.low[d]);
            let center = 0.5 * (self.high[d] + self.low[d]);
            ((v[d] - center) / scale).clamp(-1.0, 1.0)
        }))
    }

    fn absorb(&mut self, batch: &RolloutBatch) -> Result<()> {
        for seg in &batch.segments {
            for t in 0..seg.len() {
                let item = ReplayItem {
                    s: seg.states[t].clone(),
                    a: self.encode_action(&seg.actions[t])?,
                    r: seg.rewards[t],
                    s2: seg.next_states[t].clone(),
                    done: seg.dones[t],
                };
                self.replay.push_back(item);
                if self.replay.len() > self.config.replay_capacity {
                    self.replay.pop_front();
                }
            }
        }
        Ok(())
    }

    fn gradient_step(&mut self, rng: &mut Rng) -> Result<(f64, f64, f64)> {
        let b = self.config.batch;
        let k = self.low.len();
        let idx: Vec<usize> = (0..b).map(|_| rng.usize_below(self.replay.len())).collect();
        let s_cols: Vec<Vector> = idx.iter().map(|&i| self.replay[i].s.clone()).collect();
        let a_cols: Vec<Vector> = idx.iter().map(|&i| self.replay[i].a.clone()).collect();
        let s2_cols: Vec<Vector> = idx.iter().map(|&i| self.replay[i].s2.clone()).collect();
        let s = Matrix::from_columns(&s_cols);
        let a = Matrix::from_columns(&a_cols);
        let s2 = Matrix::from_columns(&s2_cols);
        let alpha = self.alpha();

        // Critic step: fresh next actions from the current actor, value from
        // the target critic.
        let z2 = Matrix::from_fn(k, b, |_, _| rng.normal());
        let head2 = actor_head(&self.actor.output(&s2), k);
        let next = sample_actions(&head2, &z2, &self.low, &self.high);
        let q_next = self.target.output(&stack(&s2, &next.a));
        let targets: Vec<f64> = idx
            .iter()
            .enumerate()
            .map(|(c, &i)| {
                let item = &self.replay[i];
                bellman_target(
                    item.r,
                    item.done,
                    self.config.gamma,
                    q_next[(0, c)],
                    alpha,
                    next.lp[c],
                )
            })
            .collect();
        let (critic_loss, critic_grads) = critic_loss_and_grads(&self.critic, &s, &a, &targets);
        if !critic_loss.is_finite() || !critic_grads.is_finite() {
            return Err(Error::Numerical(
                "non-finite critic gradient; aborting run".into(),
            ));
        }
        self.critic_optim.step(
            self.config.lr,
            self.critic.params_mut(),
            critic_grads.values(),
        );

        // Actor step with frozen draws, then temperature.
        let z = Matrix::from_fn(k, b, |_, _| rng.normal());
        let (actor_loss, actor_grads, mean_lp) = actor_loss_and_grads(
            &self.actor,
            &self.critic,
            &s,
            &z,
            alpha,
            &self.low,
            &self.high,
        );
        if !actor_loss.is_finite() || !actor_grads.is_finite() {
            return Err(Error::Numerical(
                "non-finite actor gradient; aborting run".into(),
            ));
        }
        self.actor_optim.step(
            self.config.lr,
            self.actor.params_mut(),
            actor_grads.values(),
        );

        let g = alpha_grad(self.log_alpha, mean_lp, self.h_target());
        self.alpha_optim.step(
            self.config.lr,
            std::iter::once(&mut self.log_alpha),
            std::iter::once(g),
        );

        polyak_update(&mut self.target, &self.critic, self.config.tau);
        Ok((critic_loss, actor_loss, mean_lp))
    }
}

impl Agent for SacAgent {
    fn act(&self, state: &Vector, rng: &mut Rng, deterministic: bool) -> Result<ActionSample> {
        let k = self.low.len();
        let out = self.actor.output_vec(state);
        let mut lp = 0.0;
        let mut u = Vector::zeros(k);
        let mut a_env = Vector::zeros(k);
        for d in 0..k {
            let (ls, _) = clamp_log_var(out[k + d], LOG_STD_LO, LOG_STD_HI);
            let sigma = ls.exp();
            let z = if deterministic { 0.0 } else { rng.normal() };
            let ud = out[d] + sigma * z;
            let t = ud.tanh();
            let scale = 0.5 * (self.high[d] - self.low[d]);
            let center = 0.5 * (self.high[d] + self.low[d]);
            u[d] = ud;
            a_env[d] = center + scale * t;
            lp += -0.5 * LOG_2PI - ls - 0.5 * z * z
                - (scale * (1.0 - t * t) + SQUASH_EPS).ln();
        }
        Ok(ActionSample {
            action: Action::Continuous(a_env),
            log_prob: lp,
            pre_squash: Some(u),
        })
    }

    fn update(
        &mut self,
        batch: &RolloutBatch,
        epochs: usize,
        rng: &mut Rng,
    ) -> Result<UpdateDiagnostics> {
        self.absorb(batch)?;
        if self.replay.len() < self.config.batch {
            return Ok(UpdateDiagnostics {
                alpha: self.alpha(),
                ..UpdateDiagnostics::default()
            });
        }
        let mut diag = UpdateDiagnostics::default();
        for _ in 0..epochs {
            let (critic_loss, actor_loss, mean_lp) = self.gradient_step(rng)?;
            diag.value_loss = critic_loss;
            diag.policy_loss = actor_loss;
            diag.entropy = -mean_lp;
        }
        diag.alpha = self.alpha();
        Ok(diag)
    }

    fn checkpoint(&self) -> Result<PolicyCheckpoint> {
        Ok(super::checkpoint::sac_checkpoint(self))
    }
}
