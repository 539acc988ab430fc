use diffpace_core::diffusion::{ema_update, make_schedule, GaussianPrior};
use diffpace_core::rng::{complex_normal_vec, seeded};
use diffpace_core::solver::{consistency_project, rho};
use diffpace_core::{CMatrix, CVector, C64};
use proptest::prelude::*;

fn random_matrix(seed: u64, rows: usize, cols: usize) -> CMatrix {
    let mut rng = seeded(seed);
    let v = complex_normal_vec(&mut rng, rows * cols, 1.0);
    CMatrix::from_iterator(rows, cols, v.iter().copied())
}

fn random_vector(seed: u64, len: usize) -> CVector {
    complex_normal_vec(&mut seeded(seed), len, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // The projection moves z only inside the row space of Φ and scales the
    // residual by |1 − ρ|. The oracle uses nalgebra's SVD pseudo-inverse.
    #[test]
    fn projection_matches_pseudo_inverse(seed in any::<u64>(), m in 1usize..8, extra in 0usize..6, rho in 0.0f64..2.0) {
        let n = m + extra;
        let phi = random_matrix(seed, m, n);
        let z = random_vector(seed ^ 1, n);
        let y = random_vector(seed ^ 2, m);
        let got = consistency_project(&z, &y, &phi, rho).unwrap();
        let pinv = phi.clone().pseudo_inverse(1e-12).unwrap();
        let want = &z + pinv * (&y - &phi * &z) * C64::new(rho, 0.0);
        prop_assert!((&got - &want).norm() <= 1e-8 * (1.0 + want.norm()));
        let before = (&y - &phi * &z).norm();
        let after = (&y - &phi * &got).norm();
        prop_assert!((after - (1.0 - rho).abs() * before).abs() <= 1e-8 * (1.0 + before));
    }

    #[test]
    fn schedule_is_geometric_and_ends_at_zero(k in 1usize..200, lo in 1e-4f64..1.0, span in 1.01f64..1e3) {
        let hi = lo * span;
        let s = make_schedule(k, lo, hi).unwrap();
        let sig = s.sigmas();
        prop_assert_eq!(sig.len(), k + 1);
        prop_assert_eq!(sig[k], 0.0);
        prop_assert!((sig[0] - hi).abs() <= 1e-12 * hi);
        prop_assert!(sig.windows(2).all(|w| w[0] > w[1]));
        if k > 1 {
            prop_assert!((sig[k - 1] - lo).abs() <= 1e-12 * hi);
            let ratio = sig[1] / sig[0];
            prop_assert!(sig[..k].windows(2).all(|w| (w[1] / w[0] - ratio).abs() < 1e-9));
        }
    }

    #[test]
    fn ema_contracts_at_rate_m(seed in any::<u64>(), m in 0.0f64..0.999, len in 1usize..20) {
        let theta: Vec<f64> = random_vector(seed, len).iter().map(|z| z.re).collect();
        let mut shadow: Vec<f64> = random_vector(seed ^ 7, len).iter().map(|z| z.im).collect();
        let dist = |a: &[f64]| a.iter().zip(&theta).map(|(x, t)| (x - t).powi(2)).sum::<f64>().sqrt();
        let before = dist(&shadow);
        ema_update(&mut shadow, &theta, m).unwrap();
        prop_assert!((dist(&shadow) - m * before).abs() <= 1e-12 * (1.0 + before));
    }

    // Tweedie: the posterior mean is h_t + σ²·score for a Gaussian prior.
    #[test]
    fn gaussian_posterior_mean_is_tweedie(seed in any::<u64>(), n in 1usize..6, sigma in 0.01f64..5.0) {
        let a = random_matrix(seed, n, n);
        let cov = &a * a.adjoint();
        let prior = GaussianPrior::new(random_vector(seed ^ 3, n), &cov).unwrap();
        let h_t = random_vector(seed ^ 4, n);
        let score = prior.score(&h_t, sigma).unwrap();
        let tweedie = &h_t + score * C64::new(sigma * sigma, 0.0);
        let pm = prior.posterior_mean(&h_t, sigma).unwrap();
        prop_assert!((&tweedie - &pm).norm() <= 1e-8 * (1.0 + pm.norm()));
    }

    // With no measurement noise the last step size is exactly 1/β.
    #[test]
    fn step_sizes_are_positive_and_end_at_inverse_beta(k in 2usize..150, lambda in 1e-3f64..10.0, beta in 1e-2f64..10.0, sn in 0.0f64..2.0) {
        let s = make_schedule(k, 0.01, 5.0).unwrap();
        for i in 1..=k {
            prop_assert!(rho(&s, i, lambda, beta, sn).unwrap() > 0.0);
        }
        let last = rho(&s, 1, lambda, beta, 0.0).unwrap();
        prop_assert!((last - 1.0 / beta).abs() <= 1e-12 / beta);
    }
}
