//! Self-describing model checkpoints for experiment resumption.
//!
//! JSON with a `kind` tag; numeric payloads are plain arrays so files stay
//! portable. serde_json round-trips f64 exactly, so a restored model
//! reproduces the original's predictions bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::deep_kernel::{DeepKernelConfig, DeepKernelModel};
use crate::dynamics::ensemble::{DeepEnsembleModel, EnsembleConfig};
use crate::dynamics::gp::{GpConfig, GpHyper, GpModel};
use crate::dynamics::{DynamicsModel, Normalizer};
use crate::error::{Error, Result};
use crate::numerics::linalg::{Matrix, Vector};
use crate::numerics::mlp::{Activation, Mlp};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixDto {
    pub rows: usize,
    pub cols: usize,
    /// Column-major, rows*cols entries.
    pub data: Vec<f64>,
}

impl MatrixDto {
    pub fn from_matrix(m: &Matrix) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.as_slice().to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Checkpoint(format!(
                "matrix payload holds {} values for a {}x{} shape",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(Matrix::from_column_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalizerDto {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizerDto {
    pub fn from_normalizer(n: &Normalizer) -> Self {
        Self {
            mean: n.mean.iter().copied().collect(),
            std: n.std.iter().copied().collect(),
        }
    }

    pub fn to_normalizer(&self) -> Result<Normalizer> {
        if self.mean.len() != self.std.len() {
            return Err(Error::Checkpoint("normalizer mean/std length mismatch".into()));
        }
        Ok(Normalizer {
            mean: Vector::from_vec(self.mean.clone()),
            std: Vector::from_vec(self.std.clone()),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpDto {
    pub weights: Vec<MatrixDto>,
    pub biases: Vec<Vec<f64>>,
    pub activation: Activation,
}

impl MlpDto {
    pub fn from_mlp(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(MatrixDto::from_matrix).collect(),
            biases: net
                .biases
                .iter()
                .map(|b| b.iter().copied().collect())
                .collect(),
            activation: net.activation,
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        if self.weights.len() != self.biases.len() || self.weights.is_empty() {
            return Err(Error::Checkpoint("network layer lists are inconsistent".into()));
        }
        let weights: Vec<Matrix> = self
            .weights
            .iter()
            .map(MatrixDto::to_matrix)
            .collect::<Result<_>>()?;
        let biases: Vec<Vector> = self
            .biases
            .iter()
            .map(|b| Vector::from_vec(b.clone()))
            .collect();
        for (w, b) in weights.iter().zip(&biases) {
            if w.nrows() != b.len() {
                return Err(Error::Checkpoint("bias length does not match layer rows".into()));
            }
        }
        for pair in weights.windows(2) {
            if pair[1].ncols() != pair[0].nrows() {
                return Err(Error::Checkpoint("layer shapes do not chain".into()));
            }
        }
        Ok(Mlp {
            weights,
            biases,
            activation: self.activation,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelCheckpoint {
    Gp {
        config: GpConfig,
        in_dim: usize,
        out_dim: usize,
        hypers: Vec<GpHyper>,
        inputs: MatrixDto,
        targets_norm: MatrixDto,
        normalizer: NormalizerDto,
    },
    DeepKernel {
        config: DeepKernelConfig,
        in_dim: usize,
        out_dim: usize,
        hypers: Vec<GpHyper>,
        net: MlpDto,
        inputs: MatrixDto,
        targets_norm: MatrixDto,
        normalizer: NormalizerDto,
    },
    DeepEnsemble {
        config: EnsembleConfig,
        in_dim: usize,
        out_dim: usize,
        members: Vec<MlpDto>,
        normalizer: NormalizerDto,
        fit_calls: usize,
    },
}

impl ModelCheckpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = std::fs::read_to_string(path)?;
        serde_json::from_str(&json).map_err(|e| Error::Checkpoint(format!("parse: {e}")))
    }

    /// Rebuild a ready-to-predict model.
    pub fn restore(&self) -> Result<Box<dyn DynamicsModel>> {
        match self {
            ModelCheckpoint::Gp {
                config,
                in_dim,
                out_dim,
                hypers,
                inputs,
                targets_norm,
                normalizer,
            } => {
                let mut model = GpModel::new(*in_dim, *out_dim, config.clone());
                model.set_hypers(hypers.clone());
                model.restore_state(
                    inputs.to_matrix()?,
                    normalizer.to_normalizer()?,
                    targets_norm.to_matrix()?,
                )?;
                Ok(Box::new(model))
            }
            ModelCheckpoint::DeepKernel {
                config,
                in_dim,
                out_dim,
                hypers,
                net,
                inputs,
                targets_norm,
                normalizer,
            } => {
                let mut model = DeepKernelModel::new(
                    *in_dim,
                    *out_dim,
                    config.clone(),
                    &crate::numerics::rng::Rng::new(0),
                );
                model.restore(
                    net.to_mlp()?,
                    hypers.clone(),
                    inputs.to_matrix()?,
                    targets_norm.to_matrix()?,
                    normalizer.to_normalizer()?,
                )?;
                Ok(Box::new(model))
            }
            ModelCheckpoint::DeepEnsemble {
                config,
                in_dim,
                out_dim,
                members,
                normalizer,
                fit_calls,
            } => {
                let mut model = DeepEnsembleModel::new(
                    *in_dim,
                    *out_dim,
                    config.clone(),
                    &crate::numerics::rng::Rng::new(0),
                );
                let nets: Vec<Mlp> = members.iter().map(MlpDto::to_mlp).collect::<Result<_>>()?;
                model.restore(nets, normalizer.to_normalizer()?, *fit_calls)?;
                Ok(Box::new(model))
            }
        }
    }
}

pub(crate) fn gp_checkpoint(model: &GpModel) -> Result<ModelCheckpoint> {
    let inputs = model
        .training_inputs()
        .ok_or_else(|| Error::Checkpoint("cannot checkpoint an unfitted model".into()))?;
    let targets = model.stored_targets_norm().expect("fitted");
    let normalizer = model.normalizer().expect("fitted");
    Ok(ModelCheckpoint::Gp {
        config: model.config().clone(),
        in_dim: model.input_dim(),
        out_dim: model.output_dim(),
        hypers: model.hypers().to_vec(),
        inputs: MatrixDto::from_matrix(inputs),
        targets_norm: MatrixDto::from_matrix(targets),
        normalizer: NormalizerDto::from_normalizer(normalizer),
    })
}

pub(crate) fn deep_kernel_checkpoint(model: &DeepKernelModel) -> Result<ModelCheckpoint> {
    let (x, ys, normalizer) = model
        .stored_state()
        .ok_or_else(|| Error::Checkpoint("cannot checkpoint an unfitted model".into()))?;
    Ok(ModelCheckpoint::DeepKernel {
        config: model.config().clone(),
        in_dim: model.input_dim(),
        out_dim: model.output_dim(),
        hypers: model.hypers().to_vec(),
        net: MlpDto::from_mlp(model.feature_net()),
        inputs: MatrixDto::from_matrix(x),
        targets_norm: MatrixDto::from_matrix(ys),
        normalizer: NormalizerDto::from_normalizer(normalizer),
    })
}

pub(crate) fn ensemble_checkpoint(model: &DeepEnsembleModel) -> Result<ModelCheckpoint> {
    if !model.is_fitted() {
        return Err(Error::Checkpoint("cannot checkpoint an unfitted model".into()));
    }
    Ok(ModelCheckpoint::DeepEnsemble {
        config: model.config().clone(),
        in_dim: model.input_dim(),
        out_dim: model.output_dim(),
        members: model.members().iter().map(MlpDto::from_mlp).collect(),
        normalizer: NormalizerDto::from_normalizer(model.normalizer()),
        fit_calls: model.fit_calls(),
    })
}
