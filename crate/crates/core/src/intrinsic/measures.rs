//! Per-transition uncertainty measures over posterior predictives.
//!
//! Mixture entropy and EIG share one Monte-Carlo estimator that evaluates
//! member and mixture log-densities on the same draws; the difference form
//! cancels sampling noise, so identical members give exactly zero EIG.

use std::ops::Range;

use crate::dynamics::PosteriorPredictive;
use crate::numerics::gaussian::GaussianDiag;
use crate::numerics::linalg::Vector;
use crate::numerics::rng::Rng;

/// Half the Euclidean distance between the predictive mean (mixture mean
/// for ensembles) and the observed target, over the given output dims.
pub fn pred_error_bonus(pp: &PosteriorPredictive, observed: &Vector, dims: Range<usize>) -> f64 {
    debug_assert_eq!(observed.len(), dims.len());
    let mean = pp.mean();
    let mut sq = 0.0;
    for (k, d) in dims.enumerate() {
        sq += (mean[d] - observed[k]).powi(2);
    }
    0.5 * sq.sqrt()
}

/// Total epistemic spread over the given output dims. For a single Gaussian
/// this is the summed epistemic variance. For a mixture it is the variance
/// of member means, plus the mean member variance unless `epistemic_only`.
pub fn variance_bonus(pp: &PosteriorPredictive, dims: Range<usize>, epistemic_only: bool) -> f64 {
    match pp {
        PosteriorPredictive::Single(g) => dims.map(|d| g.epistemic_var[d]).sum(),
        PosteriorPredictive::Mixture(ms) => {
            let m = ms.len() as f64;
            let mut total = 0.0;
            for d in dims {
                let mean_d: f64 = ms.iter().map(|g| g.mean[d]).sum::<f64>() / m;
                let between: f64 =
                    ms.iter().map(|g| (g.mean[d] - mean_d).powi(2)).sum::<f64>() / m;
                let within: f64 = ms.iter().map(|g| g.var[d]).sum::<f64>() / m;
                total += between;
                if !epistemic_only {
                    total += within;
                }
            }
            total
        }
    }
}

/// Log-density of the equally-weighted mixture at `x`.
fn mixture_log_density(members: &[GaussianDiag], x: &Vector) -> f64 {
    let logs: Vec<f64> = members.iter().map(|g| g.log_density(x)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
    max + sum.ln() - (members.len() as f64).ln()
}

/// Monte-Carlo mixture entropy and mean member entropy evaluated on shared
/// draws: `samples` per member, each scored under both its own member
/// density and the mixture density.
fn mixture_entropies_mc(
    members: &[GaussianDiag],
    samples: usize,
    rng: &mut Rng,
) -> (f64, f64) {
    let total = (members.len() * samples) as f64;
    let mut h_mix = 0.0;
    let mut h_members = 0.0;
    for g in members {
        for _ in 0..samples {
            let x = g.sample(rng);
            h_mix -= mixture_log_density(members, &x);
            h_members -= g.log_density(&x);
        }
    }
    (h_mix / total, h_members / total)
}

/// Differential entropy of the full predictive (epistemic + noise).
/// Mixtures use the Monte-Carlo estimator with `samples` draws per member.
pub fn entropy_bonus(pp: &PosteriorPredictive, samples: usize, rng: &mut Rng) -> f64 {
    match pp {
        PosteriorPredictive::Single(g) => g.total().entropy(),
        PosteriorPredictive::Mixture(ms) => mixture_entropies_mc(ms, samples, rng).0,
    }
}

/// Expected information gain of one imagined transition.
///
/// Single Gaussian: closed form 0.5 sum_d [log(noise_d + epi_d) - log
/// noise_d]. Mixture: Jensen-Shannon divergence of the members, estimated as
/// mixture entropy minus mean member entropy on shared draws, clamped at 0.
pub fn eig_bonus(pp: &PosteriorPredictive, samples: usize, rng: &mut Rng) -> f64 {
    match pp {
        PosteriorPredictive::Single(g) => {
            let mut acc = 0.0;
            for d in 0..g.dim() {
                let noise = g.noise_var[d].max(1e-300);
                acc += 0.5 * (((noise + g.epistemic_var[d]) / noise).ln());
            }
            acc
        }
        PosteriorPredictive::Mixture(ms) => {
            let (h_mix, h_members) = mixture_entropies_mc(ms, samples, rng);
            (h_mix - h_members).max(0.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::GaussianPredictive;
    use crate::numerics::gaussian::gaussian_entropy;
    use crate::numerics::rng::Rng;
    use proptest::prelude::*;

    fn single(mean: Vec<f64>, epi: Vec<f64>, noise: Vec<f64>) -> PosteriorPredictive {
        PosteriorPredictive::Single(GaussianPredictive {
            mean: Vector::from_vec(mean),
            epistemic_var: Vector::from_vec(epi),
            noise_var: Vector::from_vec(noise),
        })
    }

    fn member(mean: Vec<f64>, var: Vec<f64>) -> GaussianDiag {
        GaussianDiag::new(Vector::from_vec(mean), Vector::from_vec(var)).unwrap()
    }

    #[test]
    fn pred_error_zero_at_the_mean() {
        let pp = single(vec![0.7, -0.3], vec![0.1, 0.1], vec![0.01, 0.01]);
        let obs = Vector::from_vec(vec![0.7, -0.3]);
        assert_eq!(pred_error_bonus(&pp, &obs, 0..2), 0.0);
    }

    #[test]
    fn pred_error_is_half_the_distance() {
        let pp = single(vec![0.0], vec![0.1], vec![0.01]);
        let obs = Vector::from_vec(vec![2.0]);
        assert!((pred_error_bonus(&pp, &obs, 0..1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pred_error_uses_the_mixture_mean() {
        let pp = PosteriorPredictive::Mixture(vec![
            member(vec![1.0], vec![0.5]),
            member(vec![-1.0], vec![0.5]),
        ]);
        let obs = Vector::from_vec(vec![0.0]);
        assert!(pred_error_bonus(&pp, &obs, 0..1).abs() < 1e-12);
    }

    #[test]
    fn pred_error_restricts_to_requested_dims() {
        let pp = single(vec![9.0, 1.0, 2.0], vec![0.0; 3], vec![0.1; 3]);
        let obs = Vector::from_vec(vec![1.0, 0.0]);
        // Skips dim 0 (reward); distance over dims 1..3 is |(1,2)-(1,0)| = 2.
        assert!((pred_error_bonus(&pp, &obs, 1..3) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn variance_sums_epistemic_dims_for_single() {
        let pp = single(vec![0.0, 0.0], vec![0.2, 0.3], vec![5.0, 5.0]);
        assert!((variance_bonus(&pp, 0..2, true) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn variance_of_identical_zero_variance_members_is_zero() {
        let pp = PosteriorPredictive::Mixture(vec![
            member(vec![0.4], vec![1e-12]),
            member(vec![0.4], vec![1e-12]),
        ]);
        assert_eq!(variance_bonus(&pp, 0..1, true), 0.0);
    }

    #[test]
    fn variance_disagreement_of_plus_minus_one_is_one() {
        let pp = PosteriorPredictive::Mixture(vec![
            member(vec![1.0], vec![0.7]),
            member(vec![-1.0], vec![0.7]),
        ]);
        assert!((variance_bonus(&pp, 0..1, true) - 1.0).abs() < 1e-12);
        // Full decomposition adds the mean member variance.
        assert!((variance_bonus(&pp, 0..1, false) - 1.7).abs() < 1e-12);
    }

    #[test]
    fn entropy_of_unit_gaussian_matches_closed_form() {
        let pp = single(vec![0.0], vec![0.4], vec![0.6]);
        let mut rng = Rng::new(0);
        assert!((entropy_bonus(&pp, 32, &mut rng) - 1.4189385332046727).abs() < 1e-12);
    }

    #[test]
    fn entropy_gains_one_nat_per_e_squared_variance() {
        let a = single(vec![0.0, 0.0], vec![0.0, 0.0], vec![0.5, 2.0]);
        let e2 = std::f64::consts::E * std::f64::consts::E;
        let b = single(vec![0.0, 0.0], vec![0.0, 0.0], vec![0.5 * e2, 2.0 * e2]);
        let mut rng = Rng::new(0);
        let ha = entropy_bonus(&a, 8, &mut rng);
        let hb = entropy_bonus(&b, 8, &mut rng);
        assert!((hb - ha - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mixture_of_identical_members_has_member_entropy() {
        let g = member(vec![0.3], vec![0.8]);
        let pp = PosteriorPredictive::Mixture(vec![g.clone(), g.clone(), g.clone()]);
        let mut rng = Rng::new(5);
        let h = entropy_bonus(&pp, 2000, &mut rng);
        assert!((h - g.entropy()).abs() < 0.05, "mc {h} vs exact {}", g.entropy());
    }

    #[test]
    fn eig_closed_form_examples() {
        let zero_epi = single(vec![0.0], vec![0.0], vec![1.0]);
        let mut rng = Rng::new(0);
        assert_eq!(eig_bonus(&zero_epi, 32, &mut rng), 0.0);

        let e2 = std::f64::consts::E * std::f64::consts::E;
        let pp = single(vec![0.0], vec![e2 - 1.0], vec![1.0]);
        assert!((eig_bonus(&pp, 32, &mut rng) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eig_of_identical_members_is_exactly_zero() {
        let g = member(vec![1.0, -2.0], vec![0.3, 0.9]);
        let pp = PosteriorPredictive::Mixture(vec![g.clone(), g.clone(), g]);
        let mut rng = Rng::new(9);
        assert_eq!(eig_bonus(&pp, 32, &mut rng), 0.0);
    }

    #[test]
    fn eig_matches_quadrature_for_two_separated_members() {
        // Two 1-D unit Gaussians at +-3; mixture entropy by fine trapezoid.
        let members = vec![member(vec![3.0], vec![1.0]), member(vec![-3.0], vec![1.0])];
        let pp = PosteriorPredictive::Mixture(members.clone());
        let step = 0.005;
        let lo = -12.0;
        let hi = 12.0;
        let n = ((hi - lo) / step) as usize;
        let mut h_mix = 0.0;
        for i in 0..=n {
            let x = Vector::from_vec(vec![lo + i as f64 * step]);
            let lq = mixture_log_density(&members, &x);
            let q = lq.exp();
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            h_mix += -q * lq * w * step;
        }
        let true_jsd = h_mix - gaussian_entropy(&Vector::from_vec(vec![1.0]));
        let mut rng = Rng::new(3);
        let est = eig_bonus(&pp, 512, &mut rng);
        assert!(
            (est - true_jsd).abs() < 0.05,
            "mc {est} vs quadrature {true_jsd}"
        );
    }

    #[test]
    fn jsd_estimator_near_zero_for_equal_mean_members() {
        // Members share the mean; only variances differ slightly, so the
        // true JSD is small and the estimate must sit within 0.02 of it
        // for a matched analytic case: identical variances give exactly 0.
        let a = member(vec![0.0], vec![1.0]);
        let pp = PosteriorPredictive::Mixture(vec![a.clone(), a]);
        for seed in 0..20 {
            let mut rng = Rng::new(seed);
            let est = eig_bonus(&pp, 64, &mut rng);
            assert!(est.abs() <= 0.02, "seed {seed}: {est}");
        }
    }

    #[test]
    fn eig_translation_invariance() {
        let base = vec![
            member(vec![0.5], vec![0.4]),
            member(vec![-0.7], vec![0.9]),
            member(vec![0.1], vec![0.2]),
        ];
        let shifted: Vec<GaussianDiag> = base
            .iter()
            .map(|g| member(vec![g.mean[0] + 37.25], vec![g.var[0]]))
            .collect();
        let e1 = eig_bonus(&PosteriorPredictive::Mixture(base), 128, &mut Rng::new(4));
        let e2 = eig_bonus(&PosteriorPredictive::Mixture(shifted), 128, &mut Rng::new(4));
        assert!((e1 - e2).abs() < 1e-9, "{e1} vs {e2}");
    }

    #[test]
    fn eig_monotone_in_epistemic_variance() {
        let mut rng = Rng::new(0);
        let mut last = -1.0;
        for k in 0..6 {
            let epi = 0.2 * k as f64;
            let pp = single(vec![0.0], vec![epi], vec![0.3]);
            let v = eig_bonus(&pp, 8, &mut rng);
            assert!(v > last || (k == 0 && v == 0.0));
            last = v;
        }
    }

    proptest! {
        // Differential entropies can go negative for sharp densities, so the
        // EIG <= entropy ordering is only guaranteed once every per-dim
        // variance keeps densities below 1; restrict the domain accordingly.
        #[test]
        fn eig_never_exceeds_entropy_single(
            epi in proptest::collection::vec(0.0f64..10.0, 1..4),
            noise_raw in proptest::collection::vec(0.0f64..10.0, 1..4),
        ) {
            let d = epi.len().min(noise_raw.len());
            let noise: Vec<f64> = noise_raw[..d]
                .iter()
                .map(|v| v + 1.0 / std::f64::consts::TAU)
                .collect();
            let pp = single(vec![0.0; d], epi[..d].to_vec(), noise);
            let mut rng = Rng::new(1);
            let e = eig_bonus(&pp, 16, &mut rng);
            let h = entropy_bonus(&pp, 16, &mut rng);
            prop_assert!(e <= h + 1e-12);
        }

        #[test]
        fn eig_never_exceeds_entropy_mixture(
            means in proptest::collection::vec(-3.0f64..3.0, 2..5),
            vars_raw in proptest::collection::vec(0.0f64..4.0, 2..5),
            seed in 0u64..50,
        ) {
            let m = means.len().min(vars_raw.len());
            let members: Vec<GaussianDiag> = (0..m)
                .map(|i| member(
                    vec![means[i]],
                    vec![vars_raw[i] + 1.0 / std::f64::consts::TAU],
                ))
                .collect();
            let pp = PosteriorPredictive::Mixture(members);
            let e = eig_bonus(&pp, 32, &mut Rng::new(seed));
            let h = entropy_bonus(&pp, 32, &mut Rng::new(seed));
            prop_assert!(e <= h + 1e-12);
        }
    }
}
