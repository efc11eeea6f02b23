//! Minimal feed-forward network with explicit reverse-mode gradients.
//!
//! Batches are matrices with one sample per column, so forward and backward
//! passes reduce to dense matrix products. Hidden layers share one activation;
//! the output layer is linear and callers split it into whatever heads they
//! need (logits, mean/log-variance pairs, values).

use super::linalg::{Matrix, Vector};
use super::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Activations recorded during a forward pass; consumed by [`Mlp::backward`].
pub struct Tape {
    /// Layer inputs: `acts[0]` is the batch itself, `acts[l]` the
    /// post-activation of hidden layer `l`.
    acts: Vec<Matrix>,
}

/// Per-parameter gradients with the same shapes as the network.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            weights: mlp
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.nrows(), w.ncols()))
                .collect(),
            biases: mlp.biases.iter().map(|b| Vector::zeros(b.len())).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &MlpGrads, c: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.zip_apply(b, |x, y| *x += c * y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.zip_apply(b, |x, y| *x += c * y);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for w in &mut self.weights {
            *w *= c;
        }
        for b in &mut self.biases {
            *b *= c;
        }
    }

    /// Parameter-order iteration matching [`Mlp::params_mut`].
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
            .copied()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }
}

/// Fully-connected network `dims[0] -> dims[1] -> ... -> dims.last()`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vector>,
    pub activation: Activation,
}

impl Mlp {
    /// Random initialization: Xavier-uniform for tanh, He-normal for relu.
    /// `dims` includes the input and output widths and needs at least two
    /// entries; intermediate entries are hidden layers.
    pub fn new(dims: &[usize], activation: Activation, rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let w = match activation {
                Activation::Tanh => {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Matrix::from_fn(fan_out, fan_in, |_, _| rng.uniform(-bound, bound))
                }
                Activation::Relu => {
                    let std = (2.0 / fan_in as f64).sqrt();
                    Matrix::from_fn(fan_out, fan_in, |_, _| std * rng.normal())
                }
            };
            weights.push(w);
            biases.push(Vector::zeros(fan_out));
        }
        Self {
            weights,
            biases,
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().unwrap().nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum()
    }

    /// Mutable parameter walk in a fixed order (per layer: weights
    /// column-major, then bias). Gradient iteration matches.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(self.biases.iter())
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
            .copied()
    }

    /// Forward pass on a batch (one sample per column), recording the tape.
    pub fn forward(&self, x: &Matrix) -> (Matrix, Tape) {
        debug_assert_eq!(x.nrows(), self.input_dim());
        let layers = self.weights.len();
        let mut acts = Vec::with_capacity(layers);
        acts.push(x.clone());
        let mut a = x.clone();
        for l in 0..layers {
            let mut z = &self.weights[l] * &a;
            for mut col in z.column_iter_mut() {
                col += &self.biases[l];
            }
            if l + 1 < layers {
                z.apply(|v| *v = self.activation.apply(*v));
                acts.push(z.clone());
            }
            a = z;
        }
        (a, Tape { acts })
    }

    /// Forward pass without a tape.
    pub fn output(&self, x: &Matrix) -> Matrix {
        self.forward(x).0
    }

    /// Single-sample convenience forward.
    pub fn output_vec(&self, x: &Vector) -> Vector {
        let out = self.output(&Matrix::from_columns(&[x.clone()]));
        out.column(0).into_owned()
    }

    /// Backward pass. `grad_out` is dLoss/dOutput (same shape as the forward
    /// output, loss summed over the batch). Returns parameter gradients and
    /// dLoss/dInput.
    pub fn backward(&self, tape: &Tape, grad_out: &Matrix) -> (MlpGrads, Matrix) {
        let layers = self.weights.len();
        let mut grads = MlpGrads::zeros_like(self);
        let mut delta = grad_out.clone();
        for l in (0..layers).rev() {
            grads.weights[l] = &delta * tape.acts[l].transpose();
            for (i, row) in delta.row_iter().enumerate() {
                grads.biases[l][i] = row.sum();
            }
            let mut prev = self.weights[l].transpose() * &delta;
            if l > 0 {
                prev.zip_apply(&tape.acts[l], |d, a| {
                    *d *= self.activation.derivative_from_output(a)
                });
            }
            delta = prev;
        }
        (grads, delta)
    }
}

/// Smooth squashing of a raw log-variance into `(lo, hi)`:
/// `lo + (hi-lo)*sigmoid(4*(raw-mid)/(hi-lo))`, unit slope at the midpoint.
/// Returns the squashed value and its derivative w.r.t. `raw`; gradients stay
/// alive at the rails, and the output is strictly inside the range.
#[inline]
pub fn clamp_log_var(raw: f64, lo: f64, hi: f64) -> (f64, f64) {
    let width = hi - lo;
    let k = 4.0 / width;
    let s = sigmoid(k * (raw - 0.5 * (lo + hi)));
    (lo + width * s, 4.0 * s * (1.0 - s))
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
