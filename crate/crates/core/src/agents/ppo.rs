//! Proximal policy optimization with a clipped surrogate, a shared
//! trunk for policy and value heads, and generalized advantage estimation.
//!
//! Discrete head: network rows `0..n` are action logits, row `n` is the value.
//! Continuous head: rows `0..k` are pre-squash means, row `k` is the value;
//! log standard deviations are state-independent learned parameters. Actions
//! are tanh-squashed onto the action box.

use serde::{Deserialize, Serialize};

use super::{ActionSample, Agent, PolicyCheckpoint, RolloutBatch, UpdateDiagnostics};
use crate::envs::Action;
use crate::error::{Error, Result};
use crate::numerics::gaussian::LOG_2PI;
use crate::numerics::linalg::{Matrix, Vector};
use crate::numerics::mlp::{Activation, Mlp, MlpGrads};
use crate::numerics::rng::Rng;
use crate::numerics::adam::Adam;

/// Softening inside the tanh-Jacobian log term.
const SQUASH_EPS: f64 = 1e-6;
const ADV_STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub lr: f64,
    pub clip: f64,
    pub c_value: f64,
    pub c_entropy: f64,
    pub gamma: f64,
    pub lam: f64,
    pub minibatch: usize,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            clip: 0.2,
            c_value: 0.5,
            c_entropy: 0.01,
            gamma: 0.99,
            lam: 0.95,
            minibatch: 64,
            hidden: vec![64, 64],
            init_log_std: -0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Head {
    Discrete { n: usize },
    Continuous { low: Vector, high: Vector },
}

impl Head {
    fn action_rows(&self) -> usize {
        match self {
            Head::Discrete { n } => *n,
            Head::Continuous { low, .. } => low.len(),
        }
    }
}

pub struct PpoAgent {
    pub(crate) net: Mlp,
    pub(crate) log_std: Vec<f64>,
    pub(crate) head: Head,
    pub(crate) config: PpoConfig,
    optim: Adam,
}

/// Generalized advantage estimation over one trajectory.
///
/// `values` has one entry per step plus a bootstrap value for the state after
/// the last step; the bootstrap is masked out when the final step terminated.
/// Returns `(advantages, returns)` with `returns[t] = advantages[t] + values[t]`.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lam: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(values.len(), n + 1, "values must include a bootstrap entry");
    assert_eq!(dones.len(), n);
    let mut adv = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let nonterm = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * nonterm - values[t];
        carry = delta + gamma * lam * nonterm * carry;
        adv[t] = carry;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Clipped surrogate for one transition. Returns the objective term and its
/// derivative with respect to the new log-probability.
pub(crate) fn clipped_surrogate(ratio: f64, adv: f64, clip: f64) -> (f64, f64) {
    let unclipped = ratio * adv;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
    if unclipped <= clipped {
        (unclipped, ratio * adv)
    } else {
        (clipped, 0.0)
    }
}

fn softmax(logits: &[f64]) -> (Vec<f64>, f64) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let lse = max + sum.ln();
    (exps.iter().map(|e| e / sum).collect(), lse)
}

/// Log-density of the tanh-squashed Gaussian at pre-squash point `u`.
pub(crate) fn squashed_log_prob(
    u: &Vector,
    mean: &Vector,
    log_std: &[f64],
    low: &Vector,
    high: &Vector,
) -> f64 {
    let mut lp = 0.0;
    for d in 0..u.len() {
        let sigma = log_std[d].exp();
        let z = (u[d] - mean[d]) / sigma;
        let scale = 0.5 * (high[d] - low[d]);
        let t = u[d].tanh();
        lp += -0.5 * LOG_2PI - log_std[d] - 0.5 * z * z - (scale * (1.0 - t * t) + SQUASH_EPS).ln();
    }
    lp
}

fn squash(u: &Vector, low: &Vector, high: &Vector) -> Vector {
    Vector::from_fn(u.len(), |d, _| {
        let scale = 0.5 * (high[d] - low[d]);
        let center = 0.5 * (high[d] + low[d]);
        center + scale * u[d].tanh()
    })
}

/// Minibatch slices gathered for one gradient evaluation.
pub(crate) struct MbData {
    pub states: Matrix,
    pub actions: MbActions,
    pub old_lp: Vec<f64>,
    pub adv: Vec<f64>,
    pub ret: Vec<f64>,
}

pub(crate) enum MbActions {
    Discrete(Vec<usize>),
    /// Pre-squash draws, one column per sample.
    Continuous(Matrix),
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct LossParts {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub mean_new_lp: f64,
}

/// Full loss `-surrogate + c_value*value_mse - c_entropy*entropy` and its
/// gradients over the minibatch. Pure in the parameters, so finite-difference
/// checks can probe it directly.
pub(crate) fn ppo_loss_and_grads(
    net: &Mlp,
    log_std: &[f64],
    head: &Head,
    mb: &MbData,
    config: &PpoConfig,
) -> Result<(f64, MlpGrads, Vec<f64>, LossParts)> {
    let b = mb.states.ncols();
    assert!(b > 0);
    let inv_b = 1.0 / b as f64;
    let (out, tape) = net.forward(&mb.states);
    let vrow = head.action_rows();
    let mut grad_out = Matrix::zeros(out.nrows(), out.ncols());
    let mut log_std_grads = vec![0.0; log_std.len()];
    let mut parts = LossParts::default();
    let mut loss = 0.0;

    for s in 0..b {
        let v = out[(vrow, s)];
        let ret = mb.ret[s];
        let verr = v - ret;
        parts.value_loss += verr * verr * inv_b;
        loss += config.c_value * verr * verr * inv_b;
        grad_out[(vrow, s)] = 2.0 * config.c_value * verr * inv_b;

        let (new_lp, entropy) = match (&mb.actions, head) {
            (MbActions::Discrete(acts), Head::Discrete { n }) => {
                let logits: Vec<f64> = (0..*n).map(|j| out[(j, s)]).collect();
                let (p, lse) = softmax(&logits);
                let a = acts[s];
                let new_lp = logits[a] - lse;
                let entropy: f64 = -p
                    .iter()
                    .map(|&pi| if pi > 0.0 { pi * pi.ln() } else { 0.0 })
                    .sum::<f64>();
                let (surr, dsurr_dlp) =
                    clipped_surrogate((new_lp - mb.old_lp[s]).exp(), mb.adv[s], config.clip);
                parts.surrogate += surr * inv_b;
                loss += -surr * inv_b;
                parts.entropy += entropy * inv_b;
                loss += -config.c_entropy * entropy * inv_b;
                for j in 0..*n {
                    let ind = if j == a { 1.0 } else { 0.0 };
                    let dlp = ind - p[j];
                    let dh = -p[j] * (p[j].max(1e-300).ln() + entropy);
                    grad_out[(j, s)] +=
                        (-dsurr_dlp * dlp - config.c_entropy * dh) * inv_b;
                }
                (new_lp, entropy)
            }
            (MbActions::Continuous(us), Head::Continuous { low, high }) => {
                let k = low.len();
                let u = us.column(s);
                let mean: Vec<f64> = (0..k).map(|d| out[(d, s)]).collect();
                let mut new_lp = 0.0;
                let mut dlp_dmean = vec![0.0; k];
                let mut dlp_dls = vec![0.0; k];
                for d in 0..k {
                    let sigma = log_std[d].exp();
                    let z = (u[d] - mean[d]) / sigma;
                    let scale = 0.5 * (high[d] - low[d]);
                    let t = u[d].tanh();
                    new_lp += -0.5 * LOG_2PI
                        - log_std[d]
                        - 0.5 * z * z
                        - (scale * (1.0 - t * t) + SQUASH_EPS).ln();
                    dlp_dmean[d] = z / sigma;
                    dlp_dls[d] = z * z - 1.0;
                }
                // Entropy of the pre-squash Gaussian; constant across states.
                let entropy: f64 = log_std
                    .iter()
                    .map(|ls| ls + 0.5 * (1.0 + LOG_2PI))
                    .sum();
                let (surr, dsurr_dlp) =
                    clipped_surrogate((new_lp - mb.old_lp[s]).exp(), mb.adv[s], config.clip);
                parts.surrogate += surr * inv_b;
                loss += -surr * inv_b;
                parts.entropy += entropy * inv_b;
                loss += -config.c_entropy * entropy * inv_b;
                for d in 0..k {
                    grad_out[(d, s)] += -dsurr_dlp * dlp_dmean[d] * inv_b;
                    log_std_grads[d] +=
                        (-dsurr_dlp * dlp_dls[d] - config.c_entropy) * inv_b;
                }
                (new_lp, entropy)
            }
            _ => {
                return Err(Error::InvalidAction(
                    "batch action kind does not match policy head".into(),
                ))
            }
        };
        parts.mean_new_lp += new_lp * inv_b;
        let _ = entropy;
    }

    let (grads, _) = net.backward(&tape, &grad_out);
    Ok((loss, grads, log_std_grads, parts))
}

impl PpoAgent {
    pub fn discrete(state_dim: usize, n_actions: usize, config: PpoConfig, rng: &Rng) -> Self {
        let mut dims = vec![state_dim];
        dims.extend_from_slice(&config.hidden);
        dims.push(n_actions + 1);
        let mut init = rng.stream("ppo_init");
        let net = Mlp::new(&dims, Activation::Tanh, &mut init);
        let optim = Adam::new(net.param_count());
        Self {
            net,
            log_std: Vec::new(),
            head: Head::Discrete { n: n_actions },
            config,
            optim,
        }
    }

    pub fn continuous(
        state_dim: usize,
        low: Vector,
        high: Vector,
        config: PpoConfig,
        rng: &Rng,
    ) -> Self {
        assert_eq!(low.len(), high.len());
        let k = low.len();
        let mut dims = vec![state_dim];
        dims.extend_from_slice(&config.hidden);
        dims.push(k + 1);
        let mut init = rng.stream("ppo_init");
        let net = Mlp::new(&dims, Activation::Tanh, &mut init);
        let log_std = vec![config.init_log_std; k];
        let optim = Adam::new(net.param_count() + k);
        Self {
            net,
            log_std,
            head: Head::Continuous { low, high },
            config,
            optim,
        }
    }

    pub(crate) fn from_parts(
        net: Mlp,
        log_std: Vec<f64>,
        head: Head,
        config: PpoConfig,
    ) -> Self {
        let optim = Adam::new(net.param_count() + log_std.len());
        Self {
            net,
            log_std,
            head,
            config,
            optim,
        }
    }

    /// Value estimate for an encoded state.
    pub fn value(&self, state: &Vector) -> f64 {
        let out = self.net.output_vec(state);
        out[self.head.action_rows()]
    }

    fn flat_batch(&self, batch: &RolloutBatch) -> Result<FlatBatch> {
        let n_total = batch.len();
        let n_segs = batch.segments.len();
        let mut cols: Vec<Vector> = Vec::with_capacity(n_total + n_segs);
        for seg in &batch.segments {
            cols.extend(seg.states.iter().cloned());
        }
        for seg in &batch.segments {
            cols.push(
                seg.next_states
                    .last()
                    .expect("non-empty segment")
                    .clone(),
            );
        }
        let out = self.net.output(&Matrix::from_columns(&cols));
        let vrow = self.head.action_rows();

        let mut adv = Vec::with_capacity(n_total);
        let mut ret = Vec::with_capacity(n_total);
        let mut offset = 0;
        for (si, seg) in batch.segments.iter().enumerate() {
            let m = seg.len();
            let mut values: Vec<f64> = (0..m).map(|t| out[(vrow, offset + t)]).collect();
            values.push(out[(vrow, n_total + si)]);
            let (a, r) = gae_advantages(
                &seg.rewards,
                &values,
                &seg.dones,
                self.config.gamma,
                self.config.lam,
            );
            adv.extend(a);
            ret.extend(r);
            offset += m;
        }

        let mean = adv.iter().sum::<f64>() / n_total as f64;
        let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n_total as f64;
        let std = var.sqrt().max(ADV_STD_FLOOR);
        for a in adv.iter_mut() {
            *a = (*a - mean) / std;
        }

        let mut states = Vec::with_capacity(n_total);
        let mut old_lp = Vec::with_capacity(n_total);
        let mut acts_disc = Vec::new();
        let mut acts_cont: Vec<Vector> = Vec::new();
        for seg in &batch.segments {
            for t in 0..seg.len() {
                states.push(seg.states[t].clone());
                old_lp.push(seg.log_probs[t]);
                match (&self.head, &seg.actions[t]) {
                    (Head::Discrete { n }, Action::Discrete(a)) => {
                        if *a >= *n {
                            return Err(Error::InvalidAction(format!(
                                "action index {a} out of range for {n} actions"
                            )));
                        }
                        acts_disc.push(*a);
                    }
                    (Head::Continuous { .. }, Action::Continuous(_)) => {
                        let u = seg.pre_squash[t].as_ref().ok_or_else(|| {
                            Error::InvalidAction(
                                "continuous batch is missing pre-squash draws".into(),
                            )
                        })?;
                        acts_cont.push(u.clone());
                    }
                    _ => {
                        return Err(Error::InvalidAction(
                            "batch action kind does not match policy head".into(),
                        ))
                    }
                }
            }
        }
        Ok(FlatBatch {
            states,
            old_lp,
            acts_disc,
            acts_cont,
            adv,
            ret,
        })
    }

    fn gather(&self, flat: &FlatBatch, idx: &[usize]) -> MbData {
        let states: Vec<Vector> = idx.iter().map(|&i| flat.states[i].clone()).collect();
        let actions = match &self.head {
            Head::Discrete { .. } => {
                MbActions::Discrete(idx.iter().map(|&i| flat.acts_disc[i]).collect())
            }
            Head::Continuous { .. } => {
                let us: Vec<Vector> = idx.iter().map(|&i| flat.acts_cont[i].clone()).collect();
                MbActions::Continuous(Matrix::from_columns(&us))
            }
        };
        MbData {
            states: Matrix::from_columns(&states),
            actions,
            old_lp: idx.iter().map(|&i| flat.old_lp[i]).collect(),
            adv: idx.iter().map(|&i| flat.adv[i]).collect(),
            ret: idx.iter().map(|&i| flat.ret[i]).collect(),
        }
    }
}

struct FlatBatch {
    states: Vec<Vector>,
    old_lp: Vec<f64>,
    acts_disc: Vec<usize>,
    acts_cont: Vec<Vector>,
    adv: Vec<f64>,
    ret: Vec<f64>,
}

impl Agent for PpoAgent {
    fn act(&self, state: &Vector, rng: &mut Rng, deterministic: bool) -> Result<ActionSample> {
        let out = self.net.output_vec(state);
        match &self.head {
            Head::Discrete { n } => {
                let logits: Vec<f64> = (0..*n).map(|j| out[j]).collect();
                let (p, lse) = softmax(&logits);
                let a = if deterministic {
                    p.iter()
                        .enumerate()
                        .max_by(|x, y| x.1.partial_cmp(y.1).expect("finite probabilities"))
                        .map(|(i, _)| i)
                        .unwrap_or(0)
                } else {
                    let draw = rng.f64();
                    let mut acc = 0.0;
                    let mut chosen = *n - 1;
                    for (i, pi) in p.iter().enumerate() {
                        acc += pi;
                        if draw < acc {
                            chosen = i;
                            break;
                        }
                    }
                    chosen
                };
                Ok(ActionSample {
                    action: Action::Discrete(a),
                    log_prob: logits[a] - lse,
                    pre_squash: None,
                })
            }
            Head::Continuous { low, high } => {
                let k = low.len();
                let mean = Vector::from_fn(k, |d, _| out[d]);
                let u = if deterministic {
                    mean.clone()
                } else {
                    Vector::from_fn(k, |d, _| mean[d] + self.log_std[d].exp() * rng.normal())
                };
                let log_prob = squashed_log_prob(&u, &mean, &self.log_std, low, high);
                Ok(ActionSample {
                    action: Action::Continuous(squash(&u, low, high)),
                    log_prob,
                    pre_squash: Some(u),
                })
            }
        }
    }

    fn update(
        &mut self,
        batch: &RolloutBatch,
        epochs: usize,
        rng: &mut Rng,
    ) -> Result<UpdateDiagnostics> {
        if batch.is_empty() || epochs == 0 {
            return Ok(UpdateDiagnostics::default());
        }
        let flat = self.flat_batch(batch)?;
        let n_total = flat.states.len();
        let mut idx: Vec<usize> = (0..n_total).collect();

        for _ in 0..epochs {
            rng.shuffle(&mut idx);
            for chunk in idx.chunks(self.config.minibatch) {
                let mb = self.gather(&flat, chunk);
                let (loss, grads, ls_grads, _) =
                    ppo_loss_and_grads(&self.net, &self.log_std, &self.head, &mb, &self.config)?;
                if !loss.is_finite()
                    || !grads.is_finite()
                    || ls_grads.iter().any(|g| !g.is_finite())
                {
                    return Err(Error::Numerical(
                        "non-finite PPO gradient; aborting run".into(),
                    ));
                }
                self.optim.step(
                    self.config.lr,
                    self.net.params_mut().chain(self.log_std.iter_mut()),
                    grads.values().chain(ls_grads.iter().copied()),
                );
            }
        }

        let all: Vec<usize> = (0..n_total).collect();
        let mb = self.gather(&flat, &all);
        let (_, _, _, parts) =
            ppo_loss_and_grads(&self.net, &self.log_std, &self.head, &mb, &self.config)?;
        let mean_old_lp = flat.old_lp.iter().sum::<f64>() / n_total as f64;
        Ok(UpdateDiagnostics {
            policy_loss: -parts.surrogate,
            value_loss: parts.value_loss,
            entropy: parts.entropy,
            kl: mean_old_lp - parts.mean_new_lp,
            alpha: 0.0,
        })
    }

    fn checkpoint(&self) -> Result<PolicyCheckpoint> {
        Ok(super::checkpoint::ppo_checkpoint(self))
    }
}
