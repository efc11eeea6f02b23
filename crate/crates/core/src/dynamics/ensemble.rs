//! Deep ensemble of probabilistic MLPs.
//!
//! Each member maps an encoded input to a per-dim (mean, log-variance) pair
//! and trains on Gaussian negative log likelihood over its own shuffle
//! stream; members differ only by initialization and shuffle order. The
//! mixture of member Gaussians is the posterior predictive: member spread is
//! the epistemic signal, member variance heads the aleatoric one.

use serde::{Deserialize, Serialize};

use crate::dynamics::checkpoint::{self, ModelCheckpoint};
use crate::dynamics::{
    clip_state_part, subsample_indices, DynamicsModel, FitDiagnostics, Normalizer,
    PosteriorPredictive, TrainSet,
};
use crate::error::{Error, Result};
use crate::numerics::adam::Adam;
use crate::numerics::gaussian::{GaussianDiag, LOG_2PI};
use crate::numerics::linalg::{Matrix, Vector};
use crate::numerics::mlp::{clamp_log_var, Activation, Mlp};
use crate::numerics::rng::Rng;

fn default_members() -> usize {
    5
}
fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}
fn default_epochs() -> usize {
    10
}
fn default_first_fit_epochs() -> usize {
    50
}
fn default_minibatch() -> usize {
    32
}
fn default_lr() -> f64 {
    1e-3
}
fn default_n_max() -> usize {
    512
}
fn default_log_var_lo() -> f64 {
    -10.0
}
fn default_log_var_hi() -> f64 {
    4.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub members: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Epochs per fit call after the first.
    pub epochs: usize,
    /// Epoch budget for the very first fit, so variance heads start near
    /// convergence rather than at their initialization transient.
    pub first_fit_epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    /// Cap on training points per fit; larger buffers are subsampled
    /// (fresh uniform draw each fit, shared by all members).
    pub n_max: usize,
    /// Clamp range for the log-variance head, in normalized target space.
    pub log_var_lo: f64,
    pub log_var_hi: f64,
    pub normalize_targets: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: default_members(),
            hidden: default_hidden(),
            activation: Activation::Relu,
            epochs: default_epochs(),
            first_fit_epochs: default_first_fit_epochs(),
            minibatch: default_minibatch(),
            lr: default_lr(),
            n_max: default_n_max(),
            log_var_lo: default_log_var_lo(),
            log_var_hi: default_log_var_hi(),
            normalize_targets: default_true(),
        }
    }
}

pub struct DeepEnsembleModel {
    config: EnsembleConfig,
    in_dim: usize,
    out_dim: usize,
    nets: Vec<Mlp>,
    optims: Vec<Adam>,
    normalizer: Normalizer,
    fitted: bool,
    fit_calls: usize,
}

impl DeepEnsembleModel {
    pub fn new(in_dim: usize, out_dim: usize, config: EnsembleConfig, rng: &Rng) -> Self {
        assert!(config.members >= 1, "ensemble needs at least one member");
        let mut dims = vec![in_dim];
        dims.extend_from_slice(&config.hidden);
        dims.push(2 * out_dim);
        let nets: Vec<Mlp> = (0..config.members)
            .map(|m| Mlp::new(&dims, config.activation, &mut rng.stream_n("init", m as u64)))
            .collect();
        let optims = nets.iter().map(|n| Adam::new(n.param_count())).collect();
        Self {
            config,
            in_dim,
            out_dim,
            nets,
            optims,
            normalizer: Normalizer::identity(out_dim),
            fitted: false,
            fit_calls: 0,
        }
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn members(&self) -> &[Mlp] {
        &self.nets
    }

    #[cfg(test)]
    pub(crate) fn members_mut(&mut self) -> &mut [Mlp] {
        &mut self.nets
    }

    pub(crate) fn restore(
        &mut self,
        nets: Vec<Mlp>,
        normalizer: Normalizer,
        fit_calls: usize,
    ) -> Result<()> {
        if nets.len() != self.config.members {
            return Err(Error::Checkpoint(format!(
                "member count mismatch: config {} vs stored {}",
                self.config.members,
                nets.len()
            )));
        }
        self.optims = nets.iter().map(|n| Adam::new(n.param_count())).collect();
        self.nets = nets;
        self.normalizer = normalizer;
        self.fit_calls = fit_calls;
        self.fitted = fit_calls > 0;
        Ok(())
    }

    pub(crate) fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub(crate) fn fit_calls(&self) -> usize {
        self.fit_calls
    }

    /// Mean and per-dim variance of one member's head, in normalized space.
    fn member_raw(&self, m: usize, input: &Vector) -> (Vector, Vector) {
        let out = self.nets[m].output_vec(input);
        let mean = Vector::from_fn(self.out_dim, |d, _| out[d]);
        let var = Vector::from_fn(self.out_dim, |d, _| {
            let (lv, _) = clamp_log_var(
                out[self.out_dim + d],
                self.config.log_var_lo,
                self.config.log_var_hi,
            );
            lv.exp()
        });
        (mean, var)
    }

    /// One minibatch gradient step for one member. Returns the mean NLL per
    /// sample before the step.
    fn minibatch_step(&mut self, m: usize, x: &Matrix, z: &Matrix) -> f64 {
        let b = x.ncols() as f64;
        let (out, tape) = self.nets[m].forward(x);
        let mut grad_out = Matrix::zeros(2 * self.out_dim, x.ncols());
        let mut loss = 0.0;
        for c in 0..x.ncols() {
            for d in 0..self.out_dim {
                let mu = out[(d, c)];
                let raw_lv = out[(self.out_dim + d, c)];
                let (lv, dlv) =
                    clamp_log_var(raw_lv, self.config.log_var_lo, self.config.log_var_hi);
                let var = lv.exp();
                let resid = z[(d, c)] - mu;
                loss += 0.5 * (LOG_2PI + lv + resid * resid / var);
                grad_out[(d, c)] = (mu - z[(d, c)]) / var / b;
                grad_out[(self.out_dim + d, c)] = 0.5 * (1.0 - resid * resid / var) * dlv / b;
            }
        }
        let (grads, _) = self.nets[m].backward(&tape, &grad_out);
        debug_assert!(grads.is_finite(), "non-finite ensemble gradients");
        self.optims[m].step(
            self.config.lr,
            self.nets[m].params_mut(),
            grads.values(),
        );
        loss / b
    }
}

impl DynamicsModel for DeepEnsembleModel {
    fn fit(&mut self, data: &TrainSet, rng: &mut Rng) -> Result<FitDiagnostics> {
        if data.is_empty() {
            return Err(Error::Numerical("cannot fit on an empty training set".into()));
        }
        if data.input_dim() != self.in_dim || data.target_dim() != self.out_dim {
            return Err(Error::DimensionMismatch {
                context: "ensemble fit",
                expected: self.in_dim + self.out_dim,
                got: data.input_dim() + data.target_dim(),
            });
        }
        let idx = subsample_indices(data.len(), self.config.n_max, &mut rng.stream("subsample"));
        self.normalizer = if self.config.normalize_targets {
            Normalizer::fit(data)
        } else {
            Normalizer::identity(self.out_dim)
        };
        let x = data.input_matrix(&idx);
        let targets = data.target_matrix(&idx);
        let k = idx.len();
        let z = Matrix::from_fn(self.out_dim, k, |d, i| {
            (targets[(d, i)] - self.normalizer.mean[d]) / self.normalizer.std[d]
        });

        let epochs = if self.fit_calls == 0 {
            self.config.epochs.max(self.config.first_fit_epochs)
        } else {
            self.config.epochs
        };
        let batch = self.config.minibatch.max(1);
        let mut final_loss = 0.0;
        let mut final_batches = 0usize;
        for m in 0..self.config.members {
            let mut member_rng = rng.stream_n("member", m as u64);
            let mut order: Vec<usize> = (0..k).collect();
            for e in 0..epochs {
                member_rng.shuffle(&mut order);
                let last_epoch = e + 1 == epochs;
                for chunk in order.chunks(batch) {
                    let xb = Matrix::from_fn(self.in_dim, chunk.len(), |r, c| x[(r, chunk[c])]);
                    let zb =
                        Matrix::from_fn(self.out_dim, chunk.len(), |r, c| z[(r, chunk[c])]);
                    let loss = self.minibatch_step(m, &xb, &zb);
                    if last_epoch {
                        final_loss += loss;
                        final_batches += 1;
                    }
                }
            }
        }
        self.fitted = true;
        self.fit_calls += 1;
        Ok(FitDiagnostics {
            loss: final_loss / final_batches.max(1) as f64,
            train_points: k,
        })
    }

    fn predict(&self, input: &Vector) -> Result<PosteriorPredictive> {
        if !self.fitted {
            return Err(Error::NotFitted);
        }
        if input.len() != self.in_dim {
            return Err(Error::DimensionMismatch {
                context: "ensemble predict",
                expected: self.in_dim,
                got: input.len(),
            });
        }
        let members = (0..self.config.members)
            .map(|m| {
                let (mean_n, var_n) = self.member_raw(m, input);
                let mean = self.normalizer.denorm_mean(&mean_n);
                let var = self.normalizer.denorm_var(&var_n);
                GaussianDiag::new(mean, var)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PosteriorPredictive::Mixture(members))
    }

    fn sample_next(
        &self,
        input: &Vector,
        rng: &mut Rng,
        state_clip: Option<(&Vector, &Vector)>,
    ) -> Result<Vector> {
        let PosteriorPredictive::Mixture(members) = self.predict(input)? else {
            unreachable!("ensemble predictive is a mixture");
        };
        let m = rng.usize_below(members.len());
        let mut sample = members[m].sample(rng);
        clip_state_part(&mut sample, state_clip);
        Ok(sample)
    }

    fn is_fitted(&self) -> bool {
        self.fitted
    }

    fn input_dim(&self) -> usize {
        self.in_dim
    }

    fn output_dim(&self) -> usize {
        self.out_dim
    }

    fn checkpoint(&self) -> Result<ModelCheckpoint> {
        checkpoint::ensemble_checkpoint(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_data(n: usize, noise: f64, seed: u64) -> TrainSet {
        let mut rng = Rng::new(seed);
        let mut data = TrainSet::new();
        for _ in 0..n {
            let x = rng.uniform(-1.0, 1.0);
            let y = 0.8 * x + noise * rng.normal();
            data.push(Vector::from_vec(vec![x]), Vector::from_vec(vec![y]));
        }
        data
    }

    fn quick_config(members: usize) -> EnsembleConfig {
        EnsembleConfig {
            members,
            hidden: vec![16],
            epochs: 30,
            first_fit_epochs: 30,
            ..EnsembleConfig::default()
        }
    }

    #[test]
    fn identical_seeds_give_identical_models() {
        let data = line_data(64, 0.05, 1);
        let build = || {
            let mut m = DeepEnsembleModel::new(1, 1, quick_config(3), &Rng::new(5));
            m.fit(&data, &mut Rng::new(9)).unwrap();
            m
        };
        let a = build();
        let b = build();
        for (na, nb) in a.members().iter().zip(b.members()) {
            for (wa, wb) in na.weights.iter().zip(&nb.weights) {
                assert_eq!(wa, wb);
            }
        }
        let q = Vector::from_vec(vec![0.4]);
        let pa = a.predict(&q).unwrap().mean();
        let pb = b.predict(&q).unwrap().mean();
        assert_eq!(pa, pb);
    }

    #[test]
    fn members_differ_from_each_other() {
        let data = line_data(64, 0.05, 2);
        let mut model = DeepEnsembleModel::new(1, 1, quick_config(3), &Rng::new(5));
        model.fit(&data, &mut Rng::new(9)).unwrap();
        let w0 = &model.members()[0].weights[0];
        let w1 = &model.members()[1].weights[0];
        assert_ne!(w0, w1);
    }

    #[test]
    fn identical_members_collapse_the_mixture() {
        let data = line_data(64, 0.05, 3);
        let mut model = DeepEnsembleModel::new(1, 1, quick_config(3), &Rng::new(5));
        model.fit(&data, &mut Rng::new(9)).unwrap();
        let template = model.members()[0].clone();
        for net in model.members_mut() {
            *net = template.clone();
        }
        let PosteriorPredictive::Mixture(ms) = model.predict(&Vector::from_vec(vec![0.1])).unwrap()
        else {
            unreachable!();
        };
        for g in &ms[1..] {
            assert_eq!(g.mean, ms[0].mean);
            assert_eq!(g.var, ms[0].var);
        }
    }

    #[test]
    fn learns_mean_and_noise_level() {
        let noise = 0.1;
        let data = line_data(400, noise, 4);
        let cfg = EnsembleConfig {
            members: 5,
            hidden: vec![16],
            epochs: 60,
            first_fit_epochs: 60,
            ..EnsembleConfig::default()
        };
        let mut model = DeepEnsembleModel::new(1, 1, cfg, &Rng::new(7));
        model.fit(&data, &mut Rng::new(11)).unwrap();
        let PosteriorPredictive::Mixture(ms) = model.predict(&Vector::from_vec(vec![0.3])).unwrap()
        else {
            unreachable!();
        };
        let mean: f64 = ms.iter().map(|g| g.mean[0]).sum::<f64>() / ms.len() as f64;
        assert!((mean - 0.24).abs() < 0.08, "mean {mean}");
        for g in &ms {
            let sigma = g.var[0].sqrt();
            assert!(sigma > 0.02 && sigma < 0.4, "sigma {sigma}");
        }
    }

    #[test]
    fn sample_mean_matches_posterior_mean() {
        let data = line_data(200, 0.05, 6);
        let mut model = DeepEnsembleModel::new(1, 1, quick_config(5), &Rng::new(3));
        model.fit(&data, &mut Rng::new(8)).unwrap();
        let q = Vector::from_vec(vec![-0.2]);
        let pp = model.predict(&q).unwrap();
        let mean = pp.mean()[0];
        let PosteriorPredictive::Mixture(ms) = &pp else {
            unreachable!();
        };
        // Mixture variance = mean member variance + spread of member means.
        let var_within: f64 = ms.iter().map(|g| g.var[0]).sum::<f64>() / ms.len() as f64;
        let var_between: f64 =
            ms.iter().map(|g| (g.mean[0] - mean).powi(2)).sum::<f64>() / ms.len() as f64;
        let n = 10_000;
        let mut rng = Rng::new(19);
        let mut acc = 0.0;
        for _ in 0..n {
            acc += model.sample_next(&q, &mut rng, None).unwrap()[0];
        }
        let emp = acc / n as f64;
        let se = ((var_within + var_between) / n as f64).sqrt();
        assert!(
            (emp - mean).abs() < 3.0 * se.max(1e-6),
            "empirical {emp} vs mean {mean} (se {se})"
        );
    }

    #[test]
    fn first_fit_uses_boosted_epoch_budget() {
        let data = line_data(64, 0.05, 12);
        let cfg = EnsembleConfig {
            members: 2,
            hidden: vec![8],
            epochs: 1,
            first_fit_epochs: 40,
            ..EnsembleConfig::default()
        };
        // A separate model limited to one epoch everywhere tracks what a
        // non-boosted first fit would produce.
        let slow_cfg = EnsembleConfig {
            first_fit_epochs: 1,
            ..cfg.clone()
        };
        let mut boosted = DeepEnsembleModel::new(1, 1, cfg, &Rng::new(2));
        let mut slow = DeepEnsembleModel::new(1, 1, slow_cfg, &Rng::new(2));
        let d1 = boosted.fit(&data, &mut Rng::new(1)).unwrap();
        let d2 = slow.fit(&data, &mut Rng::new(1)).unwrap();
        assert!(
            d1.loss < d2.loss,
            "boosted first fit should fit tighter: {} vs {}",
            d1.loss,
            d2.loss
        );
    }

    #[test]
    fn subsample_cap_applies_per_fit() {
        let data = line_data(300, 0.05, 13);
        let cfg = EnsembleConfig {
            n_max: 50,
            ..quick_config(2)
        };
        let mut model = DeepEnsembleModel::new(1, 1, cfg, &Rng::new(1));
        let diag = model.fit(&data, &mut Rng::new(2)).unwrap();
        assert_eq!(diag.train_points, 50);
    }

    #[test]
    fn unfitted_model_refuses_to_predict() {
        let model = DeepEnsembleModel::new(2, 1, quick_config(2), &Rng::new(0));
        assert!(matches!(
            model.predict(&Vector::zeros(2)),
            Err(Error::NotFitted)
        ));
    }

    #[test]
    fn sampling_respects_state_clip() {
        let data = line_data(100, 0.3, 14);
        let mut model = DeepEnsembleModel::new(1, 2, {
            let mut c = quick_config(3);
            c.epochs = 5;
            c.first_fit_epochs = 5;
            c
        }, &Rng::new(4));
        let mut wide = TrainSet::new();
        for i in 0..data.len() {
            let x = data.input(i).clone();
            let y = data.target(i)[0];
            wide.push(x, Vector::from_vec(vec![y, 3.0 * y]));
        }
        model.fit(&wide, &mut Rng::new(2)).unwrap();
        let lo = Vector::from_vec(vec![-0.05]);
        let hi = Vector::from_vec(vec![0.05]);
        let mut rng = Rng::new(21);
        for _ in 0..100 {
            let s = model
                .sample_next(&Vector::from_vec(vec![0.0]), &mut rng, Some((&lo, &hi)))
                .unwrap();
            assert!(s[1] >= -0.05 && s[1] <= 0.05);
        }
    }
}
