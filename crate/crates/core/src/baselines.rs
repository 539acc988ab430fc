//! Classical estimators: minimum-norm least squares, OMP, complex AMP and
//! linear MMSE under a known second-order prior.

use alloc::vec::Vec;

use crate::error::{ensure, Error, Result};
use crate::linalg::{
    add_diagonal, cholesky, cholesky_well_conditioned, hermitian_defect, matmul, matmul_adj_b,
    matvec, matvec_adj, mean_diagonal, norm_sq, pinv_solve, CMatrix, CVector, GramFactor, C64,
    ZERO,
};

const PINV_TOL: f64 = 1e-12;

/// Minimum-norm least-squares estimate `Φ⁺ y`.
///
/// Uses `Φᴴ(ΦΦᴴ)⁻¹y` when `Φ` is wide with a well-conditioned Gram matrix
/// and falls back to an SVD pseudo-inverse otherwise.
pub fn ls_estimate(y: &CVector, phi: &CMatrix) -> Result<CVector> {
    check_dims(y, phi)?;
    if phi.nrows() <= phi.ncols() {
        if let Ok(g) = GramFactor::new(phi, 0.0) {
            if !g.loaded() {
                return Ok(g.back_project(y));
            }
        }
    }
    Ok(pinv_solve(phi, y, PINV_TOL))
}

/// `Φᴴ(ΦΦᴴ)⁻¹y` through an existing factorization.
pub fn ls_with_factor(y: &CVector, gram: &GramFactor) -> CVector {
    gram.back_project(y)
}

fn check_dims(y: &CVector, phi: &CMatrix) -> Result<()> {
    ensure!(
        y.len() == phi.nrows(),
        "observation length {} does not match Φ with {} rows",
        y.len(),
        phi.nrows()
    );
    Ok(())
}

/// Stopping rule for OMP: whichever of the two triggers first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmpStop {
    pub max_atoms: usize,
    /// Stop once `‖y − Φĥ‖ ≤ residual_tol`.
    pub residual_tol: f64,
}

impl OmpStop {
    pub fn atoms(s: usize) -> Self {
        Self {
            max_atoms: s,
            residual_tol: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpResult {
    pub estimate: CVector,
    /// Selected columns in selection order.
    pub support: Vec<usize>,
    pub residual_norm: f64,
}

/// Orthogonal matching pursuit.
///
/// Atoms are ranked by `|φ_jᴴ r| / ‖φ_j‖`, so the result does not depend on
/// column scaling; ties go to the lowest index. Each step refits all
/// selected coefficients by least squares on the support.
pub fn omp(y: &CVector, phi: &CMatrix, stop: OmpStop) -> Result<OmpResult> {
    check_dims(y, phi)?;
    ensure!(
        stop.max_atoms <= phi.nrows(),
        "sparsity {} exceeds the {} available measurements",
        stop.max_atoms,
        phi.nrows()
    );
    let n = phi.ncols();
    let norms: Vec<f64> = phi
        .column_iter()
        .map(|c| libm::sqrt(norm_sq(c.as_slice())))
        .collect();
    let mut selected = alloc::vec![false; n];
    let mut support: Vec<usize> = Vec::new();
    let mut coeffs = CVector::zeros(0);
    let mut residual = y.clone();
    let mut res_norm = libm::sqrt(norm_sq(y.as_slice()));

    while support.len() < stop.max_atoms && res_norm > stop.residual_tol {
        let corr = matvec_adj(phi, &residual);
        let mut best = None;
        let mut best_score = 0.0;
        for j in 0..n {
            if selected[j] || norms[j] == 0.0 {
                continue;
            }
            let score = corr[j].norm() / norms[j];
            if score > best_score {
                best_score = score;
                best = Some(j);
            }
        }
        let Some(j) = best else { break };
        support.push(j);
        let sub = phi.select_columns(&support);
        let gram = sub.adjoint() * &sub;
        let Some(chol) = cholesky(&gram) else {
            // the new atom is numerically dependent on the support
            support.pop();
            break;
        };
        selected[j] = true;
        coeffs = chol.solve(&matvec_adj(&sub, y));
        residual = y - matvec(&sub, &coeffs);
        res_norm = libm::sqrt(norm_sq(residual.as_slice()));
    }

    let mut estimate = CVector::zeros(n);
    for (k, &j) in support.iter().enumerate() {
        estimate[j] = coeffs[k];
    }
    Ok(OmpResult {
        estimate,
        support,
        residual_norm: res_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmpConfig {
    pub iters: usize,
    /// Weight on the previous iterate, in `[0, 1)`.
    pub damping: f64,
    /// Threshold multiplier on the estimated noise std.
    pub tau: f64,
}

impl Default for AmpConfig {
    fn default() -> Self {
        Self {
            iters: 50,
            damping: 0.0,
            tau: 1.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmpStatus {
    Converged,
    MaxIterations,
    /// Residual grew tenfold within five iterations; the estimate is the
    /// best iterate seen.
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmpResult {
    pub estimate: CVector,
    pub status: AmpStatus,
    pub iterations: usize,
}

fn soft_threshold(u: C64, theta: f64) -> C64 {
    let m = u.norm();
    if m <= theta {
        ZERO
    } else {
        u * ((m - theta) / m)
    }
}

/// Complex AMP with a soft-threshold denoiser.
///
/// The columns of `Φ` are normalized internally; the threshold at each
/// iteration is `τ σ̂` with `σ̂ = ‖z‖ / √M`.
pub fn amp(y: &CVector, phi: &CMatrix, cfg: AmpConfig) -> Result<AmpResult> {
    check_dims(y, phi)?;
    ensure!(cfg.iters >= 1, "AMP needs at least one iteration");
    ensure!(
        (0.0..1.0).contains(&cfg.damping),
        "damping must lie in [0, 1), got {}",
        cfg.damping
    );
    ensure!(cfg.tau.is_finite() && cfg.tau >= 0.0, "tau must be >= 0");
    let (m, n) = phi.shape();
    let norms: Vec<f64> = phi
        .column_iter()
        .map(|c| libm::sqrt(norm_sq(c.as_slice())))
        .collect();
    let mut a = phi.clone();
    for (j, nj) in norms.iter().enumerate() {
        if *nj > 0.0 {
            a.column_mut(j).unscale_mut(*nj);
        }
    }
    let unnormalize = |x: &CVector| -> CVector {
        CVector::from_fn(n, |j, _| {
            if norms[j] > 0.0 {
                x[j] / norms[j]
            } else {
                ZERO
            }
        })
    };

    let mut x = CVector::zeros(n);
    let mut z = y.clone();
    let mut history: Vec<f64> = Vec::with_capacity(cfg.iters);
    let mut best = (libm::sqrt(norm_sq(y.as_slice())), x.clone());
    let mut status = AmpStatus::MaxIterations;
    let mut iterations = 0;

    for it in 0..cfg.iters {
        iterations = it + 1;
        let r = &x + matvec_adj(&a, &z);
        let sigma_hat = libm::sqrt(norm_sq(z.as_slice()) / m as f64);
        let theta = cfg.tau * sigma_hat;
        let mut x_new = CVector::zeros(n);
        let mut onsager = 0.0;
        for j in 0..n {
            x_new[j] = soft_threshold(r[j], theta);
            let mag = r[j].norm();
            if mag > theta {
                onsager += 1.0 - theta / (2.0 * mag);
            }
        }
        onsager /= m as f64;
        let z_new = y - matvec(&a, &x_new) + &z * C64::new(onsager, 0.0);

        let step = libm::sqrt(norm_sq((&x_new - &x).as_slice()));
        let d = cfg.damping;
        x = &x_new * C64::new(1.0 - d, 0.0) + &x * C64::new(d, 0.0);
        z = &z_new * C64::new(1.0 - d, 0.0) + &z * C64::new(d, 0.0);

        let res = libm::sqrt(norm_sq((y - matvec(&a, &x)).as_slice()));
        if !res.is_finite() {
            status = AmpStatus::Diverged;
            break;
        }
        if res < best.0 {
            best = (res, x.clone());
        }
        history.push(res);
        if history.len() > 5 && res > 10.0 * history[history.len() - 6] {
            status = AmpStatus::Diverged;
            break;
        }
        let scale = libm::sqrt(norm_sq(x.as_slice())).max(f64::MIN_POSITIVE);
        if step <= 1e-9 * scale {
            status = AmpStatus::Converged;
            break;
        }
    }

    let x_out = if status == AmpStatus::Diverged {
        best.1
    } else {
        x
    };
    Ok(AmpResult {
        estimate: unnormalize(&x_out),
        status,
        iterations,
    })
}

/// Mean and covariance of the channel distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderPrior {
    pub mean: CVector,
    pub covariance: CMatrix,
}

impl SecondOrderPrior {
    pub fn new(mean: CVector, covariance: CMatrix) -> Result<Self> {
        let n = mean.len();
        ensure!(
            covariance.shape() == (n, n),
            "covariance is {}x{}, expected {n}x{n}",
            covariance.nrows(),
            covariance.ncols()
        );
        let scale = covariance.iter().map(|z| z.norm()).fold(1.0, f64::max);
        ensure!(
            hermitian_defect(&covariance) <= 1e-10 * scale,
            "covariance is not Hermitian"
        );
        // PSD within -1e-10 relative: the shifted matrix must factor
        let mut shifted = covariance.clone();
        add_diagonal(&mut shifted, 1e-10 * scale);
        ensure!(
            cholesky(&shifted).is_some(),
            "covariance is not positive semidefinite"
        );
        Ok(Self { mean, covariance })
    }

    /// Sample mean and covariance with diagonal loading
    /// `load · mean(diag Σ̂)`.
    pub fn from_samples(samples: &[CVector], load: f64) -> Result<Self> {
        ensure!(
            samples.len() >= 2,
            "need at least two samples for a covariance"
        );
        let n = samples[0].len();
        ensure!(
            samples.iter().all(|s| s.len() == n),
            "samples differ in length"
        );
        let count = samples.len() as f64;
        let mut mean = CVector::zeros(n);
        for s in samples {
            mean += s;
        }
        mean /= C64::new(count, 0.0);
        let mut centred = CMatrix::zeros(n, samples.len());
        for (k, s) in samples.iter().enumerate() {
            centred.set_column(k, &(s - &mean));
        }
        let mut cov = matmul_adj_b(&centred, &centred);
        cov /= C64::new(count - 1.0, 0.0);
        // exact Hermitian symmetry regardless of rounding in the product
        for j in 0..n {
            cov[(j, j)].im = 0.0;
            for i in 0..j {
                let v = (cov[(i, j)] + cov[(j, i)].conj()) * 0.5;
                cov[(i, j)] = v;
                cov[(j, i)] = v.conj();
            }
        }
        let d = mean_diagonal(&cov);
        add_diagonal(&mut cov, load * d);
        Self::new(mean, cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmseResult {
    pub estimate: CVector,
    /// The inner matrix was singular and a pseudo-inverse was used.
    pub rank_deficient: bool,
}

/// Linear MMSE estimate under white measurement noise of variance
/// `sigma_n²`.
pub fn mmse(
    y: &CVector,
    phi: &CMatrix,
    prior: &SecondOrderPrior,
    sigma_n: f64,
) -> Result<MmseResult> {
    ensure!(
        sigma_n.is_finite() && sigma_n >= 0.0,
        "noise std must be >= 0"
    );
    let noise =
        CMatrix::from_diagonal_element(phi.nrows(), phi.nrows(), C64::new(sigma_n * sigma_n, 0.0));
    mmse_colored(y, phi, prior, &noise)
}

/// Linear MMSE estimate `μ + ΣΦᴴ(ΦΣΦᴴ + C_n)⁻¹(y − Φμ)` for a general
/// noise covariance `C_n`.
pub fn mmse_colored(
    y: &CVector,
    phi: &CMatrix,
    prior: &SecondOrderPrior,
    noise_cov: &CMatrix,
) -> Result<MmseResult> {
    check_dims(y, phi)?;
    ensure!(
        phi.ncols() == prior.dim(),
        "Φ has {} columns but the prior has dimension {}",
        phi.ncols(),
        prior.dim()
    );
    ensure!(
        noise_cov.shape() == (phi.nrows(), phi.nrows()),
        "noise covariance must be {0}x{0}",
        phi.nrows()
    );
    let sigma_phi_h = matmul_adj_b(&prior.covariance, phi);
    let mut inner = matmul(phi, &sigma_phi_h);
    inner += noise_cov;
    let innovation = y - matvec(phi, &prior.mean);
    let (weights, rank_deficient) = match cholesky_well_conditioned(&inner) {
        Some(c) => (c.solve(&innovation), false),
        None => (pinv_solve(&inner, &innovation, PINV_TOL), true),
    };
    let estimate = &prior.mean + matvec(&sigma_phi_h, &weights);
    if estimate
        .iter()
        .any(|z| !z.re.is_finite() || !z.im.is_finite())
    {
        return Err(Error::Numerical("MMSE estimate is not finite".into()));
    }
    Ok(MmseResult {
        estimate,
        rank_deficient,
    })
}

/// Bayes MSE `tr(Σ − ΣΦᴴ(ΦΣΦᴴ + C_n)⁻¹ΦΣ)` of the linear MMSE estimator.
pub fn mmse_trace(phi: &CMatrix, prior: &SecondOrderPrior, noise_cov: &CMatrix) -> Result<f64> {
    let sigma_phi_h = matmul_adj_b(&prior.covariance, phi);
    let mut inner = matmul(phi, &sigma_phi_h);
    inner += noise_cov;
    let solved = match cholesky(&inner) {
        Some(c) => c.solve(&sigma_phi_h.adjoint()),
        None => {
            let mut out = CMatrix::zeros(inner.nrows(), sigma_phi_h.nrows());
            let rhs = sigma_phi_h.adjoint();
            for j in 0..rhs.ncols() {
                out.set_column(
                    j,
                    &pinv_solve(&inner, &rhs.column(j).into_owned(), PINV_TOL),
                );
            }
            out
        }
    };
    let mut tr = 0.0;
    for i in 0..prior.dim() {
        let mut reduction = ZERO;
        for k in 0..inner.nrows() {
            reduction += sigma_phi_h[(i, k)] * solved[(k, i)];
        }
        tr += prior.covariance[(i, i)].re - reduction.re;
    }
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::measurement::nmse;
    use crate::rng::{complex_normal, complex_normal_vec, seeded, StdRng};
    use rand::Rng;

    fn gaussian_matrix(rng: &mut StdRng, m: usize, n: usize, var: f64) -> CMatrix {
        CMatrix::from_fn(m, n, |_, _| complex_normal(rng, var))
    }

    fn unit_columns(mut a: CMatrix) -> CMatrix {
        for mut c in a.column_iter_mut() {
            let nrm = libm::sqrt(norm_sq(c.as_slice()));
            c.unscale_mut(nrm);
        }
        a
    }

    fn sparse_vector(rng: &mut StdRng, n: usize, k: usize) -> (CVector, Vec<usize>) {
        let mut support: Vec<usize> = Vec::new();
        while support.len() < k {
            let j = rng.random_range(0..n);
            if !support.contains(&j) {
                support.push(j);
            }
        }
        let mut h = CVector::zeros(n);
        for &j in &support {
            // keep magnitudes away from zero
            let z = complex_normal(rng, 1.0);
            h[j] = z / z.norm() * (0.5 + rng.random::<f64>());
        }
        (h, support)
    }

    fn random_psd(rng: &mut StdRng, n: usize, rank: usize) -> CMatrix {
        let c = gaussian_matrix(rng, n, rank, 1.0 / rank as f64);
        matmul_adj_b(&c, &c)
    }

    #[test]
    fn ls_zero_and_square_cases() {
        let mut rng = seeded(1);
        let phi = gaussian_matrix(&mut rng, 6, 10, 1.0);
        let zero = ls_estimate(&CVector::zeros(6), &phi).unwrap();
        assert!(zero.iter().all(|z| z.norm() == 0.0));

        let sq = gaussian_matrix(&mut rng, 8, 8, 1.0);
        let h = complex_normal_vec(&mut rng, 8, 1.0);
        let y = matvec(&sq, &h);
        let est = ls_estimate(&y, &sq).unwrap();
        assert!(nmse(h.as_slice(), est.as_slice()).unwrap() < -100.0);
    }

    #[test]
    fn ls_beats_random_candidates_and_residual_is_orthogonal() {
        let mut rng = seeded(2);
        // tall system: residual cannot vanish
        let phi = gaussian_matrix(&mut rng, 12, 5, 1.0);
        let y = complex_normal_vec(&mut rng, 12, 1.0);
        let h = ls_estimate(&y, &phi).unwrap();
        let r = &y - matvec(&phi, &h);
        let best = norm_sq(r.as_slice());
        assert!(matvec_adj(&phi, &r).iter().all(|z| z.norm() < 1e-8));
        for _ in 0..100 {
            let v = &h + complex_normal_vec(&mut rng, 5, 0.1);
            assert!(best <= norm_sq((&y - matvec(&phi, &v)).as_slice()));
        }
        // wide system: minimum norm among consistent solutions
        let phi = gaussian_matrix(&mut rng, 5, 12, 1.0);
        let y = complex_normal_vec(&mut rng, 5, 1.0);
        let h = ls_estimate(&y, &phi).unwrap();
        assert!(max_abs_diff(matvec(&phi, &h).as_slice(), y.as_slice()) < 1e-10);
        let svd = pinv_solve(&phi, &y, 1e-12);
        assert!(max_abs_diff(h.as_slice(), svd.as_slice()) < 1e-10);
    }

    #[test]
    fn omp_zero_sparsity() {
        let mut rng = seeded(3);
        let phi = gaussian_matrix(&mut rng, 6, 10, 1.0);
        let y = complex_normal_vec(&mut rng, 6, 1.0);
        let r = omp(&y, &phi, OmpStop::atoms(0)).unwrap();
        assert!(r.support.is_empty());
        assert!(r.estimate.iter().all(|z| *z == ZERO));
        assert!(omp(&y, &phi, OmpStop::atoms(7)).is_err());
    }

    #[test]
    fn omp_one_sparse_matches_exhaustive_single_atom_fit() {
        let mut rng = seeded(4);
        for _ in 0..20 {
            let phi = unit_columns(gaussian_matrix(&mut rng, 16, 40, 1.0));
            let (h, _) = sparse_vector(&mut rng, 40, 1);
            let y = matvec(&phi, &h);
            // oracle: best single-column least-squares fit
            let mut best = (f64::INFINITY, 0usize, ZERO);
            for j in 0..40 {
                let c = phi.column(j);
                let coef = c.dotc(&y) / C64::new(norm_sq(c.as_slice()), 0.0);
                let res = norm_sq((&y - c * coef).as_slice());
                if res < best.0 {
                    best = (res, j, coef);
                }
            }
            let r = omp(&y, &phi, OmpStop::atoms(1)).unwrap();
            assert_eq!(r.support, alloc::vec![best.1]);
            assert!((r.estimate[best.1] - best.2).norm() < 1e-12);
            assert!(nmse(h.as_slice(), r.estimate.as_slice()).unwrap() < -80.0);
        }
    }

    #[test]
    fn omp_three_sparse_matches_exhaustive_support_search() {
        let mut rng = seeded(5);
        let n = 32;
        let mut total = 0.0;
        for _ in 0..50 {
            let phi = unit_columns(gaussian_matrix(&mut rng, 24, n, 1.0));
            let (h, _) = sparse_vector(&mut rng, n, 3);
            let y = matvec(&phi, &h);
            let r = omp(&y, &phi, OmpStop::atoms(3)).unwrap();
            // oracle: least-squares residual over every 3-subset
            let mut best = (f64::INFINITY, [0usize; 3]);
            for a in 0..n {
                for b in a + 1..n {
                    for c in b + 1..n {
                        let sub = phi.select_columns(&[a, b, c]);
                        let coef = pinv_solve(&sub, &y, 1e-12);
                        let res = norm_sq((&y - &sub * coef).as_slice());
                        if res < best.0 {
                            best = (res, [a, b, c]);
                        }
                    }
                }
            }
            let mut got = r.support.clone();
            got.sort_unstable();
            assert_eq!(got, best.1.to_vec());
            let e = nmse(h.as_slice(), r.estimate.as_slice()).unwrap();
            assert!(e < -60.0, "nmse {e}");
            total += e;
        }
        assert!(total / 50.0 < -60.0);
    }

    #[test]
    fn omp_ties_go_to_lowest_index_and_support_is_bounded() {
        // identical columns 1 and 3; y aligned with both
        let mut phi = CMatrix::zeros(3, 4);
        phi[(0, 0)] = C64::new(1.0, 0.0);
        phi[(1, 1)] = C64::new(1.0, 0.0);
        phi[(1, 3)] = C64::new(1.0, 0.0);
        phi[(2, 2)] = C64::new(1.0, 0.0);
        let y = CVector::from_vec(alloc::vec![ZERO, C64::new(2.0, 0.0), ZERO]);
        let r = omp(&y, &phi, OmpStop::atoms(2)).unwrap();
        assert_eq!(r.support[0], 1);
        assert!(r.support.len() <= 2);
        assert!(!r.support.contains(&3));

        let mut rng = seeded(6);
        for s in 0..8 {
            let phi = gaussian_matrix(&mut rng, 10, 20, 1.0);
            let y = complex_normal_vec(&mut rng, 10, 1.0);
            let r = omp(&y, &phi, OmpStop::atoms(s)).unwrap();
            assert!(r.support.len() <= s);
            let sub = phi.select_columns(&r.support);
            assert_eq!(crate::linalg::numerical_rank(&sub, 1e-10), r.support.len());
        }
    }

    #[test]
    fn omp_residual_tolerance_stops_early() {
        let mut rng = seeded(7);
        let phi = unit_columns(gaussian_matrix(&mut rng, 20, 40, 1.0));
        let (h, _) = sparse_vector(&mut rng, 40, 2);
        let y = matvec(&phi, &h);
        let r = omp(
            &y,
            &phi,
            OmpStop {
                max_atoms: 20,
                residual_tol: 1e-9,
            },
        )
        .unwrap();
        assert_eq!(r.support.len(), 2);
    }

    #[test]
    fn amp_zero_observation() {
        let mut rng = seeded(8);
        let phi = gaussian_matrix(&mut rng, 10, 20, 0.1);
        let r = amp(&CVector::zeros(10), &phi, AmpConfig::default()).unwrap();
        assert!(r.estimate.iter().all(|z| *z == ZERO));
    }

    #[test]
    fn amp_single_iteration_is_thresholded_matched_filter() {
        let mut rng = seeded(9);
        let phi = unit_columns(gaussian_matrix(&mut rng, 30, 60, 1.0));
        let y = complex_normal_vec(&mut rng, 30, 1.0);
        let cfg = AmpConfig {
            iters: 1,
            damping: 0.0,
            tau: 1.4,
        };
        let r = amp(&y, &phi, cfg).unwrap();
        let theta = 1.4 * libm::sqrt(norm_sq(y.as_slice()) / 30.0);
        let mf = matvec_adj(&phi, &y);
        for j in 0..60 {
            let u = mf[j];
            let want = if u.norm() <= theta {
                ZERO
            } else {
                u * (1.0 - theta / u.norm())
            };
            assert!((r.estimate[j] - want).norm() < 1e-12);
        }
    }

    #[test]
    fn amp_beats_least_squares_on_sparse_iid_problems() {
        let mut rng = seeded(10);
        let (m, n, k) = (100, 200, 20);
        let (mut amp_db, mut ls_db) = (0.0, 0.0);
        let trials = 100;
        for _ in 0..trials {
            let phi = unit_columns(gaussian_matrix(&mut rng, m, n, 1.0));
            let (h, _) = sparse_vector(&mut rng, n, k);
            let clean = matvec(&phi, &h);
            let noise_var = norm_sq(clean.as_slice()) / m as f64 / 100.0;
            let y = &clean + complex_normal_vec(&mut rng, m, noise_var);
            let a = amp(&y, &phi, AmpConfig::default()).unwrap();
            let l = ls_estimate(&y, &phi).unwrap();
            amp_db += nmse(h.as_slice(), a.estimate.as_slice()).unwrap();
            ls_db += nmse(h.as_slice(), l.as_slice()).unwrap();
        }
        let (amp_db, ls_db) = (amp_db / trials as f64, ls_db / trials as f64);
        assert!(amp_db <= ls_db - 5.0, "amp {amp_db} dB vs ls {ls_db} dB");
    }

    #[test]
    fn amp_divergence_returns_best_iterate() {
        // strongly coherent columns with no thresholding make AMP blow up
        let mut rng = seeded(11);
        let base = complex_normal_vec(&mut rng, 8, 1.0);
        let phi = CMatrix::from_fn(8, 40, |i, j| {
            base[i] + complex_normal(&mut rng, 1e-3) * (j as f64)
        });
        let y = complex_normal_vec(&mut rng, 8, 1.0);
        let r = amp(
            &y,
            &phi,
            AmpConfig {
                iters: 200,
                damping: 0.0,
                tau: 0.0,
            },
        )
        .unwrap();
        assert!(r
            .estimate
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite()));
        if r.status == AmpStatus::Diverged {
            let res = norm_sq((&y - matvec(&phi, &r.estimate)).as_slice());
            assert!(res.is_finite());
        }
    }

    #[test]
    fn prior_validation() {
        let mut rng = seeded(12);
        let cov = random_psd(&mut rng, 6, 3);
        assert!(SecondOrderPrior::new(CVector::zeros(6), cov.clone()).is_ok());
        let mut bad = cov.clone();
        bad[(0, 1)] += C64::new(0.5, 0.0);
        assert!(SecondOrderPrior::new(CVector::zeros(6), bad).is_err());
        let neg = -CMatrix::identity(6, 6);
        assert!(SecondOrderPrior::new(CVector::zeros(6), neg).is_err());
    }

    #[test]
    fn prior_from_samples_recovers_moments() {
        let mut rng = seeded(13);
        let n = 4;
        let c = gaussian_matrix(&mut rng, n, n, 0.5);
        let sigma = matmul_adj_b(&c, &c);
        let mu = complex_normal_vec(&mut rng, n, 1.0);
        let samples: Vec<CVector> = (0..20_000)
            .map(|_| &mu + matvec(&c, &complex_normal_vec(&mut rng, n, 1.0)))
            .collect();
        let p = SecondOrderPrior::from_samples(&samples, 1e-6).unwrap();
        assert!((&p.mean - &mu).norm() / mu.norm() < 0.05);
        assert!((&p.covariance - &sigma).norm() / sigma.norm() < 0.05);
        assert!(hermitian_defect(&p.covariance) == 0.0);
    }

    #[test]
    fn mmse_degenerate_priors_and_limits() {
        let mut rng = seeded(14);
        let n = 6;
        let mu = complex_normal_vec(&mut rng, n, 1.0);
        let phi = gaussian_matrix(&mut rng, n, n, 1.0);
        let y = complex_normal_vec(&mut rng, n, 1.0);

        let zero_prior = SecondOrderPrior::new(mu.clone(), CMatrix::zeros(n, n)).unwrap();
        let r = mmse(&y, &phi, &zero_prior, 0.3).unwrap();
        assert!(max_abs_diff(r.estimate.as_slice(), mu.as_slice()) < 1e-14);

        let prior = SecondOrderPrior::new(mu, random_psd(&mut rng, n, n)).unwrap();
        let r = mmse(&y, &phi, &prior, 1e-9).unwrap();
        let inv = phi.clone().try_inverse().unwrap() * &y;
        assert!(max_abs_diff(r.estimate.as_slice(), inv.as_slice()) < 1e-6);

        // σ = 0 with a rank-deficient prior: pseudo-inverse path is flagged
        let low = SecondOrderPrior::new(CVector::zeros(n), random_psd(&mut rng, n, 2)).unwrap();
        let r = mmse(&y, &phi, &low, 0.0).unwrap();
        assert!(r.rank_deficient);
        assert!(r.estimate.iter().all(|z| z.re.is_finite()));
    }

    #[test]
    fn mmse_achieves_trace_formula_and_beats_ls() {
        let mut rng = seeded(15);
        let (m, n) = (8, 16);
        let c = gaussian_matrix(&mut rng, n, n, 1.0 / n as f64);
        let sigma = matmul_adj_b(&c, &c);
        let mu = complex_normal_vec(&mut rng, n, 0.2);
        let prior = SecondOrderPrior::new(mu.clone(), sigma).unwrap();
        let phi = gaussian_matrix(&mut rng, m, n, 1.0 / m as f64);
        let sigma_n = 0.3;
        let noise = CMatrix::from_diagonal_element(m, m, C64::new(sigma_n * sigma_n, 0.0));
        let bayes = mmse_trace(&phi, &prior, &noise).unwrap();

        let trials = 10_000;
        let (mut mse, mut ls_mse) = (0.0, 0.0);
        for _ in 0..trials {
            let h = &mu + matvec(&c, &complex_normal_vec(&mut rng, n, 1.0));
            let y = matvec(&phi, &h) + complex_normal_vec(&mut rng, m, sigma_n * sigma_n);
            let est = mmse(&y, &phi, &prior, sigma_n).unwrap().estimate;
            mse += norm_sq((&h - est).as_slice());
            ls_mse += norm_sq((&h - ls_estimate(&y, &phi).unwrap()).as_slice());
        }
        mse /= trials as f64;
        ls_mse /= trials as f64;
        assert!(
            (mse / bayes - 1.0).abs() < 0.05,
            "empirical {mse} vs trace {bayes}"
        );
        assert!(mse <= ls_mse);
    }
}
