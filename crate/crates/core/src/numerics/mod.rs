//! Numerical substrate: dense linear algebra helpers, diagonal Gaussians,
//! a minimal feed-forward network with hand-rolled backprop, Adam, and a
//! splittable counter-based RNG. Everything is f64.

pub mod adam;
pub mod gaussian;
pub mod linalg;
pub mod mlp;
pub mod rng;

pub use adam::Adam;
pub use gaussian::{gaussian_entropy, gaussian_nll, GaussianDiag};
pub use linalg::{cholesky, log_det_chol, Matrix, Vector};
pub use mlp::{Activation, Mlp, MlpGrads, Tape};
pub use rng::Rng;
