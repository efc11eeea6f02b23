//! Retrospective information gain over a fixed probe set.
//!
//! Measures how much a refit shrank the joint epistemic posterior on held
//! probe inputs: 0.5 [log det Sigma_before - log det Sigma_after] summed
//! over output dims. An analysis tool for GP-family models, not part of the
//! planning loop.

use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::numerics::linalg::{cholesky, log_det_chol, Matrix};

/// Joint log det of the epistemic covariance per output dim.
fn log_dets(model: &dyn DynamicsModel, probes: &Matrix) -> Result<Vec<f64>> {
    let cov = model.posterior_cov(probes)?;
    cov.per_dim
        .iter()
        .map(|sigma| {
            let l = cholesky(sigma)?;
            log_det_chol(&l)
        })
        .collect()
}

/// Comparable covariances need a common target scale: both models must use
/// the same normalizer (matched automatically when normalization is off or
/// the data buffers share statistics).
pub fn ig_probe(
    before: &dyn DynamicsModel,
    after: &dyn DynamicsModel,
    probes: &Matrix,
) -> Result<f64> {
    let cov_b = before.posterior_cov(probes)?;
    let cov_a = after.posterior_cov(probes)?;
    let nb = &cov_b.normalizer;
    let na = &cov_a.normalizer;
    let scales_match = nb.mean.len() == na.mean.len()
        && nb
            .mean
            .iter()
            .zip(na.mean.iter())
            .all(|(a, b)| (a - b).abs() < 1e-9)
        && nb
            .std
            .iter()
            .zip(na.std.iter())
            .all(|(a, b)| (a - b).abs() < 1e-9);
    if !scales_match {
        return Err(Error::Numerical(
            "probe information gain needs both models on the same target scale".into(),
        ));
    }
    let ld_b = log_dets(before, probes)?;
    let ld_a = log_dets(after, probes)?;
    Ok(ld_b
        .iter()
        .zip(ld_a.iter())
        .map(|(b, a)| 0.5 * (b - a))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{GpConfig, GpHyper, GpModel, TrainSet};
    use crate::numerics::linalg::Vector;
    use crate::numerics::rng::Rng;

    fn fixed_config() -> GpConfig {
        GpConfig {
            hyper_steps: 0,
            normalize_targets: false,
            init: GpHyper::new(0.4, 1.0, 0.01),
            ..GpConfig::default()
        }
    }

    fn fit_on(points: &[(f64, f64)]) -> GpModel {
        let mut data = TrainSet::new();
        for (x, y) in points {
            data.push(Vector::from_vec(vec![*x]), Vector::from_vec(vec![*y]));
        }
        let mut model = GpModel::new(1, 1, fixed_config());
        model.fit(&data, &mut Rng::new(0)).unwrap();
        model
    }

    fn probe_grid(lo: f64, hi: f64, m: usize) -> Matrix {
        Matrix::from_fn(1, m, |_, c| lo + (hi - lo) * c as f64 / (m - 1) as f64)
    }

    #[test]
    fn identical_models_gain_nothing() {
        let model = fit_on(&[(0.0, 0.1), (0.5, 0.4), (-0.3, -0.2)]);
        let probes = probe_grid(-1.0, 1.0, 6);
        let ig = ig_probe(&model, &model, &probes).unwrap();
        assert_eq!(ig, 0.0);
    }

    #[test]
    fn extra_observations_never_lose_information() {
        let mut rng = Rng::new(8);
        for trial in 0..15 {
            let n = 3 + (trial % 5);
            let pts: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.uniform(-1.0, 1.0), rng.normal()))
                .collect();
            let mut more = pts.clone();
            more.push((rng.uniform(-1.0, 1.0), rng.normal()));
            let before = fit_on(&pts);
            let after = fit_on(&more);
            let probes = probe_grid(-1.0, 1.0, 7);
            let ig = ig_probe(&before, &after, &probes).unwrap();
            assert!(ig >= -1e-9, "trial {trial}: {ig}");
        }
    }

    #[test]
    fn distant_observations_carry_no_information() {
        let base: Vec<(f64, f64)> = vec![(0.0, 0.2), (0.3, -0.1), (-0.2, 0.05)];
        let mut far = base.clone();
        // 10+ lengthscales away from every probe.
        far.push((30.0, 1.0));
        let before = fit_on(&base);
        let after = fit_on(&far);
        let probes = probe_grid(-0.5, 0.5, 5);
        let ig = ig_probe(&before, &after, &probes).unwrap();
        assert!(ig.abs() < 1e-4, "{ig}");
    }

    #[test]
    fn mixture_models_are_rejected() {
        use crate::dynamics::{DeepEnsembleModel, EnsembleConfig};
        let mut data = TrainSet::new();
        let mut rng = Rng::new(2);
        for _ in 0..20 {
            let x = rng.uniform(-1.0, 1.0);
            data.push(Vector::from_vec(vec![x]), Vector::from_vec(vec![x]));
        }
        let cfg = EnsembleConfig {
            members: 2,
            hidden: vec![8],
            epochs: 2,
            first_fit_epochs: 2,
            ..EnsembleConfig::default()
        };
        let mut de = DeepEnsembleModel::new(1, 1, cfg, &Rng::new(0));
        de.fit(&data, &mut Rng::new(1)).unwrap();
        let gp = fit_on(&[(0.0, 0.0), (0.5, 0.2)]);
        let probes = probe_grid(-1.0, 1.0, 4);
        assert!(matches!(
            ig_probe(&gp, &de, &probes),
            Err(Error::ModelKindMismatch(_))
        ));
    }

    #[test]
    fn mismatched_scales_are_rejected() {
        let mut data_a = TrainSet::new();
        let mut data_b = TrainSet::new();
        for i in 0..10 {
            let x = i as f64 / 10.0;
            data_a.push(Vector::from_vec(vec![x]), Vector::from_vec(vec![x]));
            data_b.push(Vector::from_vec(vec![x]), Vector::from_vec(vec![100.0 * x]));
        }
        let normalized = GpConfig {
            hyper_steps: 0,
            normalize_targets: true,
            ..GpConfig::default()
        };
        let mut a = GpModel::new(1, 1, normalized.clone());
        a.fit(&data_a, &mut Rng::new(0)).unwrap();
        let mut b = GpModel::new(1, 1, normalized);
        b.fit(&data_b, &mut Rng::new(0)).unwrap();
        let probes = probe_grid(0.0, 1.0, 4);
        assert!(ig_probe(&a, &b, &probes).is_err());
    }
}
