//! Bayesian dynamics models: exact GPs, deep-kernel GPs and deep ensembles.
//!
//! Models are generic vector regressors from encoded (state, action) inputs
//! to an output vector; in the planning loop the convention is
//! `output[0] = reward`, `output[1..] = encoded next state`. Predictions are
//! posterior predictives that keep the epistemic (reducible) part separate
//! from aleatoric noise, which is what the intrinsic-reward layer consumes.

pub mod checkpoint;
pub mod deep_kernel;
pub mod ensemble;
pub mod gp;

pub use checkpoint::ModelCheckpoint;
pub use deep_kernel::{DeepKernelConfig, DeepKernelModel};
pub use ensemble::{DeepEnsembleModel, EnsembleConfig};
pub use gp::{gp_posterior, GpConfig, GpHyper, GpModel};

use crate::error::{Error, Result};
use crate::numerics::gaussian::GaussianDiag;
use crate::numerics::linalg::{Matrix, Vector};
use crate::numerics::rng::Rng;

/// Training pairs in encoded space, one sample per row pair.
#[derive(Debug, Clone, Default)]
pub struct TrainSet {
    inputs: Vec<Vector>,
    targets: Vec<Vector>,
}

impl TrainSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, input: Vector, target: Vector) {
        if let (Some(i0), Some(t0)) = (self.inputs.first(), self.targets.first()) {
            assert_eq!(i0.len(), input.len(), "inconsistent input dim");
            assert_eq!(t0.len(), target.len(), "inconsistent target dim");
        }
        self.inputs.push(input);
        self.targets.push(target);
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, Vector::len)
    }

    pub fn target_dim(&self) -> usize {
        self.targets.first().map_or(0, Vector::len)
    }

    pub fn input(&self, i: usize) -> &Vector {
        &self.inputs[i]
    }

    pub fn target(&self, i: usize) -> &Vector {
        &self.targets[i]
    }

    /// Column-per-sample matrix of the selected inputs.
    pub fn input_matrix(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(self.input_dim(), idx.len(), |r, c| self.inputs[idx[c]][r])
    }

    /// Column-per-sample matrix of the selected targets.
    pub fn target_matrix(&self, idx: &[usize]) -> Matrix {
        Matrix::from_fn(self.target_dim(), idx.len(), |r, c| self.targets[idx[c]][r])
    }
}

/// Uniform subsample of `0..n` capped at `n_max`, in ascending order.
pub fn subsample_indices(n: usize, n_max: usize, rng: &mut Rng) -> Vec<usize> {
    if n <= n_max {
        return (0..n).collect();
    }
    let mut all: Vec<usize> = (0..n).collect();
    // Partial Fisher-Yates: the first n_max entries are a uniform draw
    // without replacement.
    for i in 0..n_max {
        let j = i + rng.usize_below(n - i);
        all.swap(i, j);
    }
    let mut picked = all[..n_max].to_vec();
    picked.sort_unstable();
    picked
}

/// Per-output-dimension standardization of targets, refreshed at every fit.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vector,
    pub std: Vector,
}

impl Normalizer {
    const STD_FLOOR: f64 = 1e-8;

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: Vector::zeros(dim),
            std: Vector::from_element(dim, 1.0),
        }
    }

    /// Fit from all targets in the set (not just the training subsample).
    pub fn fit(data: &TrainSet) -> Self {
        let d = data.target_dim();
        let n = data.len().max(1) as f64;
        let mut mean = Vector::zeros(d);
        for t in &data.targets {
            mean += t;
        }
        mean /= n;
        let mut var = Vector::zeros(d);
        for t in &data.targets {
            for i in 0..d {
                var[i] += (t[i] - mean[i]).powi(2);
            }
        }
        var /= n;
        let std = Vector::from_fn(d, |i, _| var[i].sqrt().max(Self::STD_FLOOR));
        Self { mean, std }
    }

    pub fn normalize(&self, t: &Vector) -> Vector {
        Vector::from_fn(t.len(), |i, _| (t[i] - self.mean[i]) / self.std[i])
    }

    pub fn denorm_mean(&self, m: &Vector) -> Vector {
        Vector::from_fn(m.len(), |i, _| m[i] * self.std[i] + self.mean[i])
    }

    pub fn denorm_var(&self, v: &Vector) -> Vector {
        Vector::from_fn(v.len(), |i, _| v[i] * self.std[i] * self.std[i])
    }
}

/// A Gaussian predictive with the epistemic share of the variance kept
/// separate from the aleatoric (noise) share. All in original target units.
#[derive(Debug, Clone)]
pub struct GaussianPredictive {
    pub mean: Vector,
    pub epistemic_var: Vector,
    pub noise_var: Vector,
}

impl GaussianPredictive {
    /// Full predictive as a diagonal Gaussian (epistemic + noise variance).
    pub fn total(&self) -> GaussianDiag {
        GaussianDiag {
            mean: self.mean.clone(),
            var: Vector::from_fn(self.mean.len(), |i, _| {
                (self.epistemic_var[i] + self.noise_var[i]).max(1e-300)
            }),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Posterior predictive at one input: a single Gaussian for GP-family
/// models, an equally-weighted Gaussian mixture for ensembles.
#[derive(Debug, Clone)]
pub enum PosteriorPredictive {
    Single(GaussianPredictive),
    Mixture(Vec<GaussianDiag>),
}

impl PosteriorPredictive {
    pub fn dim(&self) -> usize {
        match self {
            PosteriorPredictive::Single(g) => g.dim(),
            PosteriorPredictive::Mixture(ms) => ms[0].dim(),
        }
    }

    /// Predictive mean (mixture mean for ensembles).
    pub fn mean(&self) -> Vector {
        match self {
            PosteriorPredictive::Single(g) => g.mean.clone(),
            PosteriorPredictive::Mixture(ms) => {
                let mut m = Vector::zeros(ms[0].dim());
                for g in ms {
                    m += &g.mean;
                }
                m / ms.len() as f64
            }
        }
    }

    /// Restriction to a contiguous output range.
    pub fn marginal(&self, dims: std::ops::Range<usize>) -> PosteriorPredictive {
        match self {
            PosteriorPredictive::Single(g) => PosteriorPredictive::Single(GaussianPredictive {
                mean: Vector::from_iterator(dims.len(), dims.clone().map(|i| g.mean[i])),
                epistemic_var: Vector::from_iterator(
                    dims.len(),
                    dims.clone().map(|i| g.epistemic_var[i]),
                ),
                noise_var: Vector::from_iterator(dims.len(), dims.map(|i| g.noise_var[i])),
            }),
            PosteriorPredictive::Mixture(ms) => PosteriorPredictive::Mixture(
                ms.iter().map(|g| g.marginal(dims.clone())).collect(),
            ),
        }
    }
}

/// Training diagnostics: mean objective per training point.
#[derive(Debug, Clone, Copy)]
pub struct FitDiagnostics {
    pub loss: f64,
    pub train_points: usize,
}

/// Full epistemic posterior covariance over a probe set, per output
/// dimension, in the model's normalized target space. GP-family only.
#[derive(Debug, Clone)]
pub struct PosteriorCov {
    pub per_dim: Vec<Matrix>,
    pub noise_var: Vec<f64>,
    pub normalizer: Normalizer,
}

pub trait DynamicsModel {
    fn fit(&mut self, data: &TrainSet, rng: &mut Rng) -> Result<FitDiagnostics>;

    fn predict(&self, input: &Vector) -> Result<PosteriorPredictive>;

    /// Draw one output vector from the posterior predictive. For mixtures a
    /// member is drawn uniformly first. `state_clip` bounds output dims
    /// `1..` (the encoded next state); the reward dim is never clipped.
    fn sample_next(
        &self,
        input: &Vector,
        rng: &mut Rng,
        state_clip: Option<(&Vector, &Vector)>,
    ) -> Result<Vector>;

    fn is_fitted(&self) -> bool;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    /// Joint epistemic covariance over a probe set; errors with
    /// [`Error::ModelKindMismatch`] for models without a GP posterior.
    fn posterior_cov(&self, _queries: &Matrix) -> Result<PosteriorCov> {
        Err(Error::ModelKindMismatch(
            "posterior covariance requires a GP-family model".into(),
        ))
    }

    fn checkpoint(&self) -> Result<ModelCheckpoint>;
}

/// Clip the state part (dims 1..) of a sampled output vector.
pub(crate) fn clip_state_part(sample: &mut Vector, clip: Option<(&Vector, &Vector)>) {
    if let Some((lo, hi)) = clip {
        debug_assert_eq!(lo.len(), sample.len() - 1);
        for i in 1..sample.len() {
            sample[i] = sample[i].clamp(lo[i - 1], hi[i - 1]);
        }
    }
}
