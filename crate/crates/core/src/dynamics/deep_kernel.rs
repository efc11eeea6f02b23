//! Deep-kernel GP: a feature MLP feeding a squared-exponential GP.
//!
//! A single feature map phi shared across output dimensions is trained
//! jointly with the per-dim kernel hyperparameters by descending the summed
//! negative log marginal likelihood; gradients reach the network through the
//! pairwise distance matrix of the features.

use serde::{Deserialize, Serialize};

use crate::dynamics::checkpoint::{self, ModelCheckpoint};
use crate::dynamics::gp::{
    dim_workspace, posterior_cov_features, predict_dim, sq_dist, GpHyper,
};
use crate::dynamics::{
    clip_state_part, subsample_indices, DynamicsModel, FitDiagnostics, GaussianPredictive,
    Normalizer, PosteriorCov, PosteriorPredictive, TrainSet,
};
use crate::error::{Error, Result};
use crate::numerics::adam::Adam;
use crate::numerics::linalg::{Matrix, Vector};
use crate::numerics::mlp::{Activation, Mlp};
use crate::numerics::rng::Rng;

fn default_feature_hidden() -> Vec<usize> {
    vec![32, 32]
}
fn default_feature_dim() -> usize {
    8
}
fn default_n_max() -> usize {
    512
}
fn default_steps() -> usize {
    50
}
fn default_lr() -> f64 {
    0.01
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepKernelConfig {
    pub feature_hidden: Vec<usize>,
    /// Latent dimension the kernel operates in.
    pub feature_dim: usize,
    pub activation: Activation,
    pub n_max: usize,
    /// Joint Adam steps (features + hypers) per fit call.
    pub steps: usize,
    pub lr: f64,
    pub normalize_targets: bool,
    pub init: GpHyper,
}

impl Default for DeepKernelConfig {
    fn default() -> Self {
        Self {
            feature_hidden: default_feature_hidden(),
            feature_dim: default_feature_dim(),
            activation: Activation::Tanh,
            n_max: default_n_max(),
            steps: default_steps(),
            lr: default_lr(),
            normalize_targets: default_true(),
            init: GpHyper::default(),
        }
    }
}

struct DkDimCache {
    chol: Matrix,
    alpha: Vector,
}

struct DkState {
    /// Raw encoded training inputs (pre-feature), one column per sample.
    x: Matrix,
    /// Feature-space image of `x` under the current network.
    phi: Matrix,
    /// Normalized targets, one row per output dim (kept for checkpoints).
    ys: Matrix,
    normalizer: Normalizer,
    dims: Vec<DkDimCache>,
}

pub struct DeepKernelModel {
    config: DeepKernelConfig,
    in_dim: usize,
    out_dim: usize,
    net: Mlp,
    hypers: Vec<GpHyper>,
    optim: Adam,
    state: Option<DkState>,
}

impl DeepKernelModel {
    pub fn new(in_dim: usize, out_dim: usize, config: DeepKernelConfig, rng: &Rng) -> Self {
        let mut dims = vec![in_dim];
        dims.extend_from_slice(&config.feature_hidden);
        dims.push(config.feature_dim);
        let net = Mlp::new(&dims, config.activation, &mut rng.stream("feature-init"));
        let optim = Adam::new(net.param_count() + 3 * out_dim);
        let hypers = vec![config.init; out_dim];
        Self {
            config,
            in_dim,
            out_dim,
            net,
            hypers,
            optim,
            state: None,
        }
    }

    /// Passthrough feature map (single identity layer): the model then
    /// coincides with an exact GP on the raw inputs.
    pub fn with_identity_features(in_dim: usize, out_dim: usize, config: DeepKernelConfig) -> Self {
        let mut cfg = config;
        cfg.feature_hidden = vec![];
        cfg.feature_dim = in_dim;
        let mut model = Self::new(in_dim, out_dim, cfg, &Rng::new(0));
        model.net.weights[0] = Matrix::identity(in_dim, in_dim);
        model.net.biases[0] = Vector::zeros(in_dim);
        model
    }

    pub fn config(&self) -> &DeepKernelConfig {
        &self.config
    }

    pub fn hypers(&self) -> &[GpHyper] {
        &self.hypers
    }

    pub fn feature_net(&self) -> &Mlp {
        &self.net
    }

    pub(crate) fn restore(
        &mut self,
        net: Mlp,
        hypers: Vec<GpHyper>,
        x: Matrix,
        ys: Matrix,
        normalizer: Normalizer,
    ) -> Result<()> {
        if hypers.len() != self.out_dim {
            return Err(Error::Checkpoint(format!(
                "hyper count mismatch: {} vs {}",
                hypers.len(),
                self.out_dim
            )));
        }
        self.optim = Adam::new(net.param_count() + 3 * self.out_dim);
        self.net = net;
        self.hypers = hypers;
        let phi = self.net.output(&x);
        let d2 = sq_dist(&phi);
        let mut dims = Vec::with_capacity(self.out_dim);
        for d in 0..self.out_dim {
            let y = Vector::from_fn(x.ncols(), |i, _| ys[(d, i)]);
            let ws = dim_workspace(&d2, &y, &self.hypers[d], false)?;
            dims.push(DkDimCache {
                chol: ws.chol,
                alpha: ws.alpha,
            });
        }
        self.state = Some(DkState {
            x,
            phi,
            ys,
            normalizer,
            dims,
        });
        Ok(())
    }

    pub(crate) fn stored_state(&self) -> Option<(&Matrix, &Matrix, &Normalizer)> {
        self.state.as_ref().map(|s| (&s.x, &s.ys, &s.normalizer))
    }
}

impl DynamicsModel for DeepKernelModel {
    fn fit(&mut self, data: &TrainSet, rng: &mut Rng) -> Result<FitDiagnostics> {
        if data.is_empty() {
            return Err(Error::Numerical("cannot fit on an empty training set".into()));
        }
        if data.input_dim() != self.in_dim || data.target_dim() != self.out_dim {
            return Err(Error::DimensionMismatch {
                context: "deep kernel fit",
                expected: self.in_dim + self.out_dim,
                got: data.input_dim() + data.target_dim(),
            });
        }
        let idx = subsample_indices(data.len(), self.config.n_max, rng);
        let x = data.input_matrix(&idx);
        let normalizer = if self.config.normalize_targets {
            Normalizer::fit(data)
        } else {
            Normalizer::identity(self.out_dim)
        };
        let targets = data.target_matrix(&idx);
        let n = idx.len();
        let ys: Vec<Vector> = (0..self.out_dim)
            .map(|d| {
                Vector::from_fn(n, |i, _| {
                    (targets[(d, i)] - normalizer.mean[d]) / normalizer.std[d]
                })
            })
            .collect();

        for _ in 0..self.config.steps {
            let (phi, tape) = self.net.forward(&x);
            let d2 = sq_dist(&phi);
            // d(-LML)/dPhi accumulated over output dims.
            let mut neg_dphi = Matrix::zeros(self.config.feature_dim, n);
            let mut hyper_grads = Vec::with_capacity(3 * self.out_dim);
            for d in 0..self.out_dim {
                let ws = dim_workspace(&d2, &ys[d], &self.hypers[d], true)?;
                let g = ws.grads.expect("grads requested");
                hyper_grads.extend_from_slice(&[
                    g.neg_d_log_ls,
                    g.neg_d_log_sv,
                    g.neg_d_log_nv,
                ]);
                // dLML/dPhi = (2/l^2) Phi (W - diag(W 1)), W = a_mat .* krbf.
                let w = g.a_mat.component_mul(&g.krbf);
                let rowsum = Vector::from_fn(n, |i, _| w.row(i).sum());
                let mut w_centered = w;
                for i in 0..n {
                    w_centered[(i, i)] -= rowsum[i];
                }
                let ls2 = self.hypers[d].lengthscale().powi(2);
                let dphi_d = &phi * w_centered * (2.0 / ls2);
                neg_dphi -= dphi_d;
            }
            let (net_grads, _) = self.net.backward(&tape, &neg_dphi);
            debug_assert!(net_grads.is_finite(), "non-finite feature gradients");
            let params = self
                .net
                .params_mut()
                .chain(self.hypers.iter_mut().flat_map(|h| {
                    [
                        &mut h.log_lengthscale,
                        &mut h.log_signal_var,
                        &mut h.log_noise_var,
                    ]
                }));
            let grads = net_grads.values().chain(hyper_grads.into_iter());
            self.optim.step(self.config.lr, params, grads);
        }

        let phi = self.net.output(&x);
        let d2 = sq_dist(&phi);
        let mut dims = Vec::with_capacity(self.out_dim);
        let mut total_neg_lml = 0.0;
        for d in 0..self.out_dim {
            let ws = dim_workspace(&d2, &ys[d], &self.hypers[d], false)?;
            total_neg_lml -= ws.lml;
            dims.push(DkDimCache {
                chol: ws.chol,
                alpha: ws.alpha,
            });
        }
        let ys_mat = Matrix::from_fn(self.out_dim, n, |d, i| ys[d][i]);
        self.state = Some(DkState {
            x,
            phi,
            ys: ys_mat,
            normalizer,
            dims,
        });
        Ok(FitDiagnostics {
            loss: total_neg_lml / (n * self.out_dim) as f64,
            train_points: n,
        })
    }

    fn predict(&self, input: &Vector) -> Result<PosteriorPredictive> {
        let state = self.state.as_ref().ok_or(Error::NotFitted)?;
        if input.len() != self.in_dim {
            return Err(Error::DimensionMismatch {
                context: "deep kernel predict",
                expected: self.in_dim,
                got: input.len(),
            });
        }
        let q_feat = self.net.output_vec(input);
        let mut mean = Vector::zeros(self.out_dim);
        let mut epi = Vector::zeros(self.out_dim);
        let mut noise = Vector::zeros(self.out_dim);
        for d in 0..self.out_dim {
            let cache = &state.dims[d];
            let (m, e) = predict_dim(&state.phi, &cache.chol, &cache.alpha, &self.hypers[d], &q_feat);
            let std = state.normalizer.std[d];
            mean[d] = m * std + state.normalizer.mean[d];
            epi[d] = e * std * std;
            noise[d] = self.hypers[d].noise_var() * std * std;
        }
        Ok(PosteriorPredictive::Single(GaussianPredictive {
            mean,
            epistemic_var: epi,
            noise_var: noise,
        }))
    }

    fn sample_next(
        &self,
        input: &Vector,
        rng: &mut Rng,
        state_clip: Option<(&Vector, &Vector)>,
    ) -> Result<Vector> {
        let pred = self.predict(input)?;
        let PosteriorPredictive::Single(g) = pred else {
            unreachable!("deep kernel predictive is a single gaussian");
        };
        let mut sample = g.total().sample(rng);
        clip_state_part(&mut sample, state_clip);
        Ok(sample)
    }

    fn is_fitted(&self) -> bool {
        self.state.is_some()
    }

    fn input_dim(&self) -> usize {
        self.in_dim
    }

    fn output_dim(&self) -> usize {
        self.out_dim
    }

    fn posterior_cov(&self, queries: &Matrix) -> Result<PosteriorCov> {
        let state = self.state.as_ref().ok_or(Error::NotFitted)?;
        if queries.nrows() != self.in_dim {
            return Err(Error::DimensionMismatch {
                context: "deep kernel posterior_cov",
                expected: self.in_dim,
                got: queries.nrows(),
            });
        }
        let q_feat = self.net.output(queries);
        let chols: Vec<&Matrix> = state.dims.iter().map(|d| &d.chol).collect();
        Ok(posterior_cov_features(
            &state.phi,
            &chols,
            &self.hypers,
            &state.normalizer,
            &q_feat,
        ))
    }

    fn checkpoint(&self) -> Result<ModelCheckpoint> {
        checkpoint::deep_kernel_checkpoint(self)
    }
}
