//! Exact Gaussian-process regression with a squared-exponential kernel.
//!
//! One independent GP per output dimension, all sharing the same inputs.
//! Hyperparameters live in log space and are tuned by maximizing the log
//! marginal likelihood with Adam. Factorizations are cached at fit time so
//! prediction never refactorizes.

use serde::{Deserialize, Serialize};

use crate::dynamics::checkpoint::{self, ModelCheckpoint};
use crate::dynamics::{
    clip_state_part, subsample_indices, DynamicsModel, FitDiagnostics, GaussianPredictive,
    Normalizer, PosteriorCov, PosteriorPredictive, TrainSet,
};
use crate::error::{Error, Result};
use crate::numerics::adam::Adam;
use crate::numerics::gaussian::LOG_2PI;
use crate::numerics::linalg::{
    cholesky, log_det_chol, solve_lower, solve_lower_mat, Matrix, Vector,
};
use crate::numerics::rng::Rng;

/// Kernel + noise hyperparameters for one output dimension, in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpHyper {
    pub log_lengthscale: f64,
    pub log_signal_var: f64,
    pub log_noise_var: f64,
}

impl GpHyper {
    pub fn new(lengthscale: f64, signal_var: f64, noise_var: f64) -> Self {
        Self {
            log_lengthscale: lengthscale.ln(),
            log_signal_var: signal_var.ln(),
            log_noise_var: noise_var.ln(),
        }
    }

    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    pub fn signal_var(&self) -> f64 {
        self.log_signal_var.exp()
    }

    pub fn noise_var(&self) -> f64 {
        self.log_noise_var.exp()
    }
}

impl Default for GpHyper {
    fn default() -> Self {
        // Inputs are encoded to roughly [-1, 1], targets standardized.
        Self::new(0.5, 1.0, 1e-3)
    }
}

fn default_n_max() -> usize {
    512
}
fn default_hyper_steps() -> usize {
    50
}
fn default_hyper_lr() -> f64 {
    0.05
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GpConfig {
    /// Cap on training points per fit; larger buffers are subsampled.
    pub n_max: usize,
    /// Adam steps on the negative log marginal likelihood (0 = fixed hypers).
    pub hyper_steps: usize,
    pub hyper_lr: f64,
    /// Standardize targets per dimension before conditioning.
    pub normalize_targets: bool,
    pub init: GpHyper,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            n_max: default_n_max(),
            hyper_steps: default_hyper_steps(),
            hyper_lr: default_hyper_lr(),
            normalize_targets: default_true(),
            init: GpHyper::default(),
        }
    }
}

/// Pairwise squared distances between the columns of `x`.
pub(crate) fn sq_dist(x: &Matrix) -> Matrix {
    let gram = x.transpose() * x;
    let n = x.ncols();
    Matrix::from_fn(n, n, |i, j| {
        (gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)]).max(0.0)
    })
}

/// Squared distances between columns of `a` (rows) and columns of `b` (cols).
pub(crate) fn sq_dist_cross(a: &Matrix, b: &Matrix) -> Matrix {
    let na: Vec<f64> = a.column_iter().map(|c| c.norm_squared()).collect();
    let nb: Vec<f64> = b.column_iter().map(|c| c.norm_squared()).collect();
    let cross = a.transpose() * b;
    Matrix::from_fn(a.ncols(), b.ncols(), |i, j| {
        (na[i] + nb[j] - 2.0 * cross[(i, j)]).max(0.0)
    })
}

/// Signal kernel matrix from precomputed squared distances (no noise term).
pub(crate) fn rbf_from_sq_dist(d2: &Matrix, hyper: &GpHyper) -> Matrix {
    let inv_two_ls2 = 0.5 / (hyper.lengthscale() * hyper.lengthscale());
    let sv = hyper.signal_var();
    d2.map(|d| sv * (-d * inv_two_ls2).exp())
}

/// Per-dimension gradients of the negative log marginal likelihood, plus the
/// intermediates a deep-kernel step needs to push gradients into features.
pub(crate) struct DimGrads {
    pub neg_d_log_ls: f64,
    pub neg_d_log_sv: f64,
    pub neg_d_log_nv: f64,
    /// 0.5 * (alpha alpha^T - K^{-1}); trace(a_mat * dK) is the LML gradient.
    pub a_mat: Matrix,
    pub krbf: Matrix,
}

pub(crate) struct DimWorkspace {
    pub lml: f64,
    pub chol: Matrix,
    pub alpha: Vector,
    pub grads: Option<DimGrads>,
}

/// Factorize one output dimension and evaluate its log marginal likelihood.
pub(crate) fn dim_workspace(
    d2: &Matrix,
    y: &Vector,
    hyper: &GpHyper,
    with_grads: bool,
) -> Result<DimWorkspace> {
    let n = y.len();
    let krbf = rbf_from_sq_dist(d2, hyper);
    let mut k = krbf.clone();
    let nv = hyper.noise_var();
    for i in 0..n {
        k[(i, i)] += nv;
    }
    let chol = cholesky(&k)?;
    let log_det = log_det_chol(&chol)?;
    let alpha = {
        let v = solve_lower(&chol, y);
        crate::numerics::linalg::solve_lower_transpose(&chol, &v)
    };
    let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * LOG_2PI;

    let grads = if with_grads {
        let eye = Matrix::identity(n, n);
        let l_inv = solve_lower_mat(&chol, &eye);
        let k_inv = l_inv.transpose() * &l_inv;
        let a_mat = (&alpha * alpha.transpose() - k_inv) * 0.5;
        let ls2 = hyper.lengthscale() * hyper.lengthscale();
        let mut d_log_ls = 0.0;
        let mut d_log_sv = 0.0;
        for i in 0..n {
            for j in 0..n {
                let aw = a_mat[(i, j)] * krbf[(i, j)];
                d_log_sv += aw;
                d_log_ls += aw * d2[(i, j)] / ls2;
            }
        }
        let d_log_nv = nv * a_mat.trace();
        Some(DimGrads {
            neg_d_log_ls: -d_log_ls,
            neg_d_log_sv: -d_log_sv,
            neg_d_log_nv: -d_log_nv,
            a_mat,
            krbf,
        })
    } else {
        None
    };

    Ok(DimWorkspace {
        lml,
        chol,
        alpha,
        grads,
    })
}

/// Joint epistemic covariance over feature-space queries, shared by the
/// exact-GP and deep-kernel models.
pub(crate) fn posterior_cov_features(
    x_feat: &Matrix,
    chols: &[&Matrix],
    hypers: &[GpHyper],
    normalizer: &Normalizer,
    q_feat: &Matrix,
) -> PosteriorCov {
    let m = q_feat.ncols();
    let d2_qq = sq_dist(q_feat);
    let d2_xq = sq_dist_cross(x_feat, q_feat);
    let mut per_dim = Vec::with_capacity(hypers.len());
    let mut noise_var = Vec::with_capacity(hypers.len());
    for (hyper, chol) in hypers.iter().zip(chols) {
        let k_qq = rbf_from_sq_dist(&d2_qq, hyper);
        let k_xq = rbf_from_sq_dist(&d2_xq, hyper);
        let v = solve_lower_mat(chol, &k_xq);
        let mut cov = k_qq - v.transpose() * &v;
        // Symmetrize and floor the diagonal against round-off.
        for i in 0..m {
            for j in (i + 1)..m {
                let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = s;
                cov[(j, i)] = s;
            }
            cov[(i, i)] = cov[(i, i)].max(0.0);
        }
        per_dim.push(cov);
        noise_var.push(hyper.noise_var());
    }
    PosteriorCov {
        per_dim,
        noise_var,
        normalizer: normalizer.clone(),
    }
}

/// Predictive mean and epistemic variance for one query, in the
/// (normalized) training space of a single output dimension.
pub(crate) fn predict_dim(
    x_train: &Matrix,
    chol: &Matrix,
    alpha: &Vector,
    hyper: &GpHyper,
    query: &Vector,
) -> (f64, f64) {
    let n = x_train.ncols();
    let inv_two_ls2 = 0.5 / (hyper.lengthscale() * hyper.lengthscale());
    let sv = hyper.signal_var();
    let k_star = Vector::from_fn(n, |i, _| {
        let d2 = (x_train.column(i) - query).norm_squared();
        sv * (-d2 * inv_two_ls2).exp()
    });
    let mean = k_star.dot(alpha);
    let v = solve_lower(chol, &k_star);
    let epi = (sv - v.norm_squared()).max(0.0);
    (mean, epi)
}

struct GpDimCache {
    chol: Matrix,
    alpha: Vector,
}

struct GpState {
    /// Training inputs actually conditioned on (post-subsample), one column
    /// per sample.
    x: Matrix,
    /// Normalized targets, one row per output dim (kept for checkpoints).
    ys: Matrix,
    normalizer: Normalizer,
    dims: Vec<GpDimCache>,
}

pub struct GpModel {
    config: GpConfig,
    in_dim: usize,
    out_dim: usize,
    /// Warm-started across fits; authoritative copy (caches borrow it).
    hypers: Vec<GpHyper>,
    state: Option<GpState>,
}

impl GpModel {
    pub fn new(in_dim: usize, out_dim: usize, config: GpConfig) -> Self {
        let hypers = vec![config.init; out_dim];
        Self {
            config,
            in_dim,
            out_dim,
            hypers,
            state: None,
        }
    }

    pub fn config(&self) -> &GpConfig {
        &self.config
    }

    pub fn hypers(&self) -> &[GpHyper] {
        &self.hypers
    }

    pub fn set_hypers(&mut self, hypers: Vec<GpHyper>) {
        assert_eq!(hypers.len(), self.out_dim);
        self.hypers = hypers;
    }

    pub(crate) fn training_inputs(&self) -> Option<&Matrix> {
        self.state.as_ref().map(|s| &s.x)
    }

    pub(crate) fn normalizer(&self) -> Option<&Normalizer> {
        self.state.as_ref().map(|s| &s.normalizer)
    }

    pub(crate) fn restore_state(
        &mut self,
        x: Matrix,
        normalizer: Normalizer,
        targets_norm: Matrix,
    ) -> Result<()> {
        let d2 = sq_dist(&x);
        let mut dims = Vec::with_capacity(self.out_dim);
        for d in 0..self.out_dim {
            let y = Vector::from_fn(x.ncols(), |i, _| targets_norm[(d, i)]);
            let ws = dim_workspace(&d2, &y, &self.hypers[d], false)?;
            dims.push(GpDimCache {
                chol: ws.chol,
                alpha: ws.alpha,
            });
        }
        self.state = Some(GpState {
            x,
            ys: targets_norm,
            normalizer,
            dims,
        });
        Ok(())
    }

    /// Normalized targets per training column, for checkpointing.
    pub(crate) fn stored_targets_norm(&self) -> Option<&Matrix> {
        self.state.as_ref().map(|s| &s.ys)
    }
}

impl DynamicsModel for GpModel {
    fn fit(&mut self, data: &TrainSet, rng: &mut Rng) -> Result<FitDiagnostics> {
        if data.is_empty() {
            return Err(Error::Numerical("cannot fit on an empty training set".into()));
        }
        if data.input_dim() != self.in_dim || data.target_dim() != self.out_dim {
            return Err(Error::DimensionMismatch {
                context: "gp fit",
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
        let d2 = sq_dist(&x);

        if self.config.hyper_steps > 0 {
            let mut adam = Adam::new(3 * self.out_dim);
            for _ in 0..self.config.hyper_steps {
                let mut grads = Vec::with_capacity(3 * self.out_dim);
                for d in 0..self.out_dim {
                    let ws = dim_workspace(&d2, &ys[d], &self.hypers[d], true)?;
                    let g = ws.grads.expect("grads requested");
                    grads.extend_from_slice(&[g.neg_d_log_ls, g.neg_d_log_sv, g.neg_d_log_nv]);
                }
                let params = self.hypers.iter_mut().flat_map(|h| {
                    [
                        &mut h.log_lengthscale,
                        &mut h.log_signal_var,
                        &mut h.log_noise_var,
                    ]
                });
                adam.step(self.config.hyper_lr, params, grads.into_iter());
            }
        }

        let mut dims = Vec::with_capacity(self.out_dim);
        let mut total_neg_lml = 0.0;
        for d in 0..self.out_dim {
            let ws = dim_workspace(&d2, &ys[d], &self.hypers[d], false)?;
            total_neg_lml -= ws.lml;
            dims.push(GpDimCache {
                chol: ws.chol,
                alpha: ws.alpha,
            });
        }
        let ys_mat = Matrix::from_fn(self.out_dim, n, |d, i| ys[d][i]);
        self.state = Some(GpState {
            x,
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
                context: "gp predict",
                expected: self.in_dim,
                got: input.len(),
            });
        }
        let mut mean = Vector::zeros(self.out_dim);
        let mut epi = Vector::zeros(self.out_dim);
        let mut noise = Vector::zeros(self.out_dim);
        for d in 0..self.out_dim {
            let cache = &state.dims[d];
            let (m, e) = predict_dim(&state.x, &cache.chol, &cache.alpha, &self.hypers[d], input);
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
            unreachable!("gp predictive is a single gaussian");
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
                context: "gp posterior_cov",
                expected: self.in_dim,
                got: queries.nrows(),
            });
        }
        let chols: Vec<&Matrix> = state.dims.iter().map(|d| &d.chol).collect();
        Ok(posterior_cov_features(
            &state.x,
            &chols,
            &self.hypers,
            &state.normalizer,
            queries,
        ))
    }

    fn checkpoint(&self) -> Result<ModelCheckpoint> {
        checkpoint::gp_checkpoint(self)
    }
}

/// Direct GP posterior for externally supplied data and hyperparameters: no
/// normalization, no subsampling. Returns per-query predictive means and
/// epistemic variances.
pub fn gp_posterior(
    x_train: &Matrix,
    y: &Vector,
    hyper: &GpHyper,
    queries: &Matrix,
) -> Result<(Vector, Vector)> {
    if x_train.ncols() != y.len() {
        return Err(Error::DimensionMismatch {
            context: "gp_posterior targets",
            expected: x_train.ncols(),
            got: y.len(),
        });
    }
    if queries.nrows() != x_train.nrows() {
        return Err(Error::DimensionMismatch {
            context: "gp_posterior queries",
            expected: x_train.nrows(),
            got: queries.nrows(),
        });
    }
    let d2 = sq_dist(x_train);
    let ws = dim_workspace(&d2, y, hyper, false)?;
    let m = queries.ncols();
    let mut means = Vector::zeros(m);
    let mut vars = Vector::zeros(m);
    for q in 0..m {
        let query = Vector::from_fn(x_train.nrows(), |i, _| queries[(i, q)]);
        let (mean, epi) = predict_dim(x_train, &ws.chol, &ws.alpha, hyper, &query);
        means[q] = mean;
        vars[q] = epi;
    }
    Ok((means, vars))
}
