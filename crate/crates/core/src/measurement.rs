//! Pilot training plans, the vectorized measurement operator Φ, noisy
//! observations and the NMSE metric.
//!
//! Measurement rows are ordered `t * (M_r L_r) + r * L_r + l` for Tx slot
//! `t`, Rx frame `r` and RF chain `l`, which is the column-major
//! vectorization of the `(M_r L_r) × M_t` received-signal matrix.

use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::Rng;

use crate::error::{ensure, Result};
use crate::geometry::{ArrayConfig, Codebook};
use crate::linalg::{kron, matmul_adj_a, matvec, norm_sq, CMatrix, CVector, C64, ZERO};
use crate::rng::complex_normal;

/// NMSE reported for an exact estimate.
pub const NMSE_FLOOR_DB: f64 = -200.0;

/// Nearest element of `{e^{j2πq/2^n_b}}` in phase; exact ties go to the
/// smaller `q`.
pub fn quantize_phase(x: C64, n_b: u32) -> Result<C64> {
    ensure!(
        x != ZERO && x.re.is_finite() && x.im.is_finite(),
        "cannot quantize the phase of {x}"
    );
    ensure!(
        (1..=30).contains(&n_b),
        "phase resolution must be 1..=30 bits, got {n_b}"
    );
    let levels = 1u64 << n_b;
    let q = phase_index(x.arg(), levels);
    Ok(phase_level(q, levels))
}

fn phase_index(arg: f64, levels: u64) -> u64 {
    let mut a = arg % TAU;
    if a < 0.0 {
        a += TAU;
    }
    let t = a * levels as f64 / TAU;
    let base = libm::floor(t);
    let frac = t - base;
    let lower = base as u64 % levels;
    let upper = (lower + 1) % levels;
    if frac > 0.5 {
        upper
    } else if frac < 0.5 {
        lower
    } else {
        lower.min(upper)
    }
}

fn phase_level(q: u64, levels: u64) -> C64 {
    let angle = TAU * q as f64 / levels as f64;
    C64::new(libm::cos(angle), libm::sin(angle))
}

/// Training plan: per-slot analog precoders and pilot symbols on the Tx
/// side, per-frame analog combiners on the Rx side.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotPlan {
    pub m_t: usize,
    pub m_r: usize,
    pub n_b: u32,
    pub l_t: usize,
    pub l_r: usize,
    /// Total transmit power `P`.
    pub power: f64,
    /// `F_t`, each `N_t × L_t`.
    pub precoders: Vec<CMatrix>,
    /// `W_r`, each `N_r × L_r`.
    pub combiners: Vec<CMatrix>,
    /// `s_t`, each of length `L_t`.
    pub symbols: Vec<CVector>,
    /// `W = [W_1 … W_{M_r}]`, `N_r × (L_r M_r)`.
    pub w: CMatrix,
    /// `P = [p_1 … p_{M_t}]` with `p_t = F_t s_t`, `N_t × M_t`.
    pub p: CMatrix,
}

impl PilotPlan {
    pub fn n_t(&self) -> usize {
        self.p.nrows()
    }

    pub fn n_r(&self) -> usize {
        self.w.nrows()
    }

    /// Number of scalar observations `M_t M_r L_r`.
    pub fn rows(&self) -> usize {
        self.m_t * self.m_r * self.l_r
    }

    /// Pilot ratio `α = M_t M_r L_r / (N_t N_r)`.
    pub fn pilot_ratio(&self) -> f64 {
        self.rows() as f64 / (self.n_t() * self.n_r()) as f64
    }

    /// Covariance of the combined noise for unit antenna noise variance:
    /// `I_{M_t} ⊗ blkdiag(W_1ᴴW_1, …, W_{M_r}ᴴW_{M_r})`.
    pub fn noise_structure(&self) -> CMatrix {
        let frame = self.m_r * self.l_r;
        let mut block = CMatrix::zeros(frame, frame);
        for (r, w_r) in self.combiners.iter().enumerate() {
            let g = matmul_adj_a(w_r, w_r);
            block
                .view_mut((r * self.l_r, r * self.l_r), (self.l_r, self.l_r))
                .copy_from(&g);
        }
        kron(&CMatrix::identity(self.m_t, self.m_t), &block)
    }
}

/// Training dimensions that realize pilot ratio `alpha`: every Rx antenna
/// is observed once per slot (`M_r L_r = N_r`) and the Tx slot count is
/// `round(α N_t)`.
pub fn pilot_dims_for_ratio(cfg: &ArrayConfig, alpha: f64) -> Result<(usize, usize)> {
    ensure!(
        alpha.is_finite() && alpha > 0.0,
        "pilot ratio must be positive, got {alpha}"
    );
    ensure!(
        cfg.n_r.is_multiple_of(cfg.l_r),
        "n_r = {} is not a multiple of l_r = {}",
        cfg.n_r,
        cfg.l_r
    );
    let m_r = cfg.n_r / cfg.l_r;
    let m_t = (libm::round(alpha * cfg.n_t as f64) as usize).max(1);
    Ok((m_t, m_r))
}

fn random_phase_matrix<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    n_b: u32,
) -> CMatrix {
    let levels = 1u64 << n_b;
    let scale = 1.0 / libm::sqrt(rows as f64);
    CMatrix::from_fn(rows, cols, |_, _| {
        phase_level(rng.random_range(0..levels), levels) * scale
    })
}

/// Random quantized-phase training plan with unit total power.
pub fn sample_pilot_plan<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &ArrayConfig,
    m_t: usize,
    m_r: usize,
    n_b: u32,
) -> Result<PilotPlan> {
    ensure!(
        m_t >= 1 && m_r >= 1,
        "training slot counts must be positive"
    );
    ensure!(
        (1..=30).contains(&n_b),
        "phase resolution must be 1..=30 bits, got {n_b}"
    );
    cfg.validate()?;
    let power = 1.0;
    let (n_t, n_r, l_t, l_r) = (cfg.n_t, cfg.n_r, cfg.l_t, cfg.l_r);

    let combiners: Vec<CMatrix> = (0..m_r)
        .map(|_| random_phase_matrix(rng, n_r, l_r, n_b))
        .collect();
    let precoders: Vec<CMatrix> = (0..m_t)
        .map(|_| random_phase_matrix(rng, n_t, l_t, n_b))
        .collect();
    // QPSK with E{s sᴴ} = (P / L_t) I
    let amp = libm::sqrt(power / (2.0 * l_t as f64));
    let symbols: Vec<CVector> = (0..m_t)
        .map(|_| {
            CVector::from_fn(l_t, |_, _| {
                let re = if rng.random::<bool>() { amp } else { -amp };
                let im = if rng.random::<bool>() { amp } else { -amp };
                C64::new(re, im)
            })
        })
        .collect();

    let mut w = CMatrix::zeros(n_r, l_r * m_r);
    for (r, w_r) in combiners.iter().enumerate() {
        w.view_mut((0, r * l_r), (n_r, l_r)).copy_from(w_r);
    }
    let mut p = CMatrix::zeros(n_t, m_t);
    for (t, (f_t, s_t)) in precoders.iter().zip(&symbols).enumerate() {
        p.set_column(t, &matvec(f_t, s_t));
    }

    Ok(PilotPlan {
        m_t,
        m_r,
        n_b,
        l_t,
        l_r,
        power,
        precoders,
        combiners,
        symbols,
        w,
        p,
    })
}

/// `Φ = (Ā_Tᴴ P)ᵀ ⊗ (Wᴴ Ā_R)`, so that `Φ vec(H̄_b) = vec(Wᴴ Ā_R H̄_b Ā_Tᴴ P)`.
pub fn build_measurement_matrix(plan: &PilotPlan, rx: &Codebook, tx: &Codebook) -> Result<CMatrix> {
    ensure!(
        rx.dim() == plan.n_r() && tx.dim() == plan.n_t(),
        "codebooks {}/{} do not match the plan's N_r = {}, N_t = {}",
        rx.dim(),
        tx.dim(),
        plan.n_r(),
        plan.n_t()
    );
    let left = matmul_adj_a(tx.matrix(), &plan.p).transpose();
    let right = matmul_adj_a(&plan.w, rx.matrix());
    Ok(kron(&left, &right))
}

/// Observation `y = Φ h + n` together with the operator that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub y: CVector,
    pub phi: CMatrix,
    /// Antenna-level noise standard deviation.
    pub sigma_n: f64,
    pub snr_db: f64,
}

/// Antenna noise variance giving `snr_db` for channels of mean energy
/// `mean_energy = E‖h‖²`.
///
/// With independent uniform pilot phases every measurement row carries
/// signal power `P E‖h‖² / (N_t N_r)` and combined noise power `σ²`, so the
/// ratio is the same for each row and for `E‖Φh‖² / E‖n‖²`.
pub fn noise_variance_for_snr(
    snr_db: f64,
    mean_energy: f64,
    n_t: usize,
    n_r: usize,
    power: f64,
) -> Result<f64> {
    ensure!(snr_db.is_finite(), "SNR must be finite, got {snr_db}");
    ensure!(
        mean_energy.is_finite() && mean_energy > 0.0,
        "reference channel energy must be positive"
    );
    let row_power = power * mean_energy / (n_t * n_r) as f64;
    Ok(row_power / libm::pow(10.0, snr_db / 10.0))
}

/// Combined antenna noise for every `(slot, frame)` pair, ordered like the
/// rows of Φ.
pub fn combined_noise<R: Rng + ?Sized>(rng: &mut R, plan: &PilotPlan, sigma_n: f64) -> CVector {
    let frame = plan.m_r * plan.l_r;
    let mut n = CVector::zeros(plan.rows());
    if sigma_n == 0.0 {
        return n;
    }
    let var = sigma_n * sigma_n;
    let n_r = plan.n_r();
    let mut antenna = CVector::zeros(n_r);
    for t in 0..plan.m_t {
        for (r, w_r) in plan.combiners.iter().enumerate() {
            for a in antenna.iter_mut() {
                *a = complex_normal(rng, var);
            }
            for l in 0..plan.l_r {
                let col = w_r.column(l);
                let mut acc = ZERO;
                for (wi, ni) in col.iter().zip(antenna.iter()) {
                    acc += wi.conj() * ni;
                }
                n[t * frame + r * plan.l_r + l] = acc;
            }
        }
    }
    n
}

/// Noisy observation of `h_b = vec(H̄_b)` through `phi` built from `plan`.
pub fn measure<R: Rng + ?Sized>(
    h_b: &CVector,
    plan: &PilotPlan,
    phi: &CMatrix,
    sigma_n: f64,
    snr_db: f64,
    rng: &mut R,
) -> Result<MeasurementSet> {
    ensure!(
        phi.nrows() == plan.rows() && phi.ncols() == h_b.len(),
        "Φ is {}x{}, expected {}x{}",
        phi.nrows(),
        phi.ncols(),
        plan.rows(),
        h_b.len()
    );
    ensure!(
        sigma_n.is_finite() && sigma_n >= 0.0,
        "noise std must be >= 0"
    );
    let mut y = matvec(phi, h_b);
    y += combined_noise(rng, plan, sigma_n);
    Ok(MeasurementSet {
        y,
        phi: phi.clone(),
        sigma_n,
        snr_db,
    })
}

/// `10 log10(‖h − ĥ‖² / ‖h‖²)`, floored at [`NMSE_FLOOR_DB`].
pub fn nmse(h_true: &[C64], h_est: &[C64]) -> Result<f64> {
    ensure!(
        h_true.len() == h_est.len(),
        "length mismatch: {} vs {}",
        h_true.len(),
        h_est.len()
    );
    let energy = norm_sq(h_true);
    ensure!(energy > 0.0, "NMSE undefined for an all-zero reference");
    let err: f64 = h_true
        .iter()
        .zip(h_est)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(nmse_from_ratio(err / energy))
}

/// Converts a linear error ratio into dB with the standard floor.
pub fn nmse_from_ratio(ratio: f64) -> f64 {
    if ratio <= 0.0 {
        return NMSE_FLOOR_DB;
    }
    (10.0 * libm::log10(ratio)).max(NMSE_FLOOR_DB)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs_diff, unvec, vec_of};
    use crate::rng::{complex_normal_vec, seeded};
    use proptest::prelude::*;
    use rand::Rng;

    fn desk_plan(seed: u64) -> (ArrayConfig, PilotPlan, Codebook, Codebook) {
        let cfg = ArrayConfig::desk();
        let (m_t, m_r) = pilot_dims_for_ratio(&cfg, 0.8).unwrap();
        let plan = sample_pilot_plan(&mut seeded(seed), &cfg, m_t, m_r, 4).unwrap();
        let (rx, tx) = cfg.codebooks().unwrap();
        (cfg, plan, rx, tx)
    }

    #[test]
    fn quantize_phase_examples() {
        let one = C64::new(1.0, 0.0);
        assert_eq!(quantize_phase(one, 1).unwrap(), one);
        let near = C64::from_polar(1.0, 0.49 * core::f64::consts::PI);
        assert!((quantize_phase(near, 1).unwrap() - one).norm() < 1e-15);
        let far = C64::from_polar(1.0, 0.51 * core::f64::consts::PI);
        assert!((quantize_phase(far, 1).unwrap() + one).norm() < 1e-15);
        assert!(quantize_phase(ZERO, 3).is_err());
    }

    #[test]
    fn quantize_phase_ties_go_to_smaller_index() {
        // exactly halfway between q = 0 and q = 1 for n_b = 2
        let x = C64::new(1.0, 1.0);
        assert_eq!(quantize_phase(x, 2).unwrap(), C64::new(1.0, 0.0));
        // halfway between q = 3 and q = 0 (wrap-around): smaller index is 0
        let x = C64::new(1.0, -1.0);
        assert_eq!(quantize_phase(x, 2).unwrap(), C64::new(1.0, 0.0));
    }

    proptest! {
        #[test]
        fn quantize_phase_lands_in_alphabet(re in -5.0f64..5.0, im in -5.0f64..5.0, bits in 1u32..6) {
            prop_assume!(re != 0.0 || im != 0.0);
            let q = quantize_phase(C64::new(re, im), bits).unwrap();
            let levels = 1u64 << bits;
            let hit = (0..levels).any(|k| (phase_level(k, levels) - q).norm() < 1e-12);
            prop_assert!(hit);
            prop_assert_eq!(quantize_phase(q, bits).unwrap(), q);
            // nearest in phase
            let d = |z: C64| (z / C64::new(re, im)).arg().abs();
            for k in 0..levels {
                prop_assert!(d(q) <= d(phase_level(k, levels)) + 1e-12);
            }
        }
    }

    #[test]
    fn four_bit_quantization_uses_sixteen_roots() {
        let mut rng = seeded(3);
        for _ in 0..200 {
            let z = complex_normal(&mut rng, 1.0);
            let q = quantize_phase(z, 4).unwrap();
            let k = libm::round(q.arg().rem_euclid(TAU) * 16.0 / TAU) as u64 % 16;
            assert!((phase_level(k, 16) - q).norm() < 1e-12);
        }
    }

    #[test]
    fn plan_is_deterministic_and_constant_modulus() {
        let (_, a, _, _) = desk_plan(5);
        let (_, b, _, _) = desk_plan(5);
        assert_eq!(a, b);
        let target_r = 1.0 / libm::sqrt(16.0);
        assert!(a.w.iter().all(|z| (z.norm() - target_r).abs() < 1e-14));
        let target_t = 1.0 / libm::sqrt(32.0);
        for f in &a.precoders {
            assert!(f.iter().all(|z| (z.norm() - target_t).abs() < 1e-14));
            for z in f.iter() {
                let unit = z / z.norm();
                assert!((quantize_phase(unit, 4).unwrap() - unit).norm() < 1e-12);
            }
        }
        for s in &a.symbols {
            for z in s.iter() {
                assert!((z.norm_sqr() - 1.0 / 2.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn pilot_ratio_formula() {
        let cfg = ArrayConfig::mmwave();
        let plan = sample_pilot_plan(&mut seeded(1), &cfg, 13, 2, 4).unwrap();
        assert_eq!(plan.rows(), 13 * 2 * 4);
        assert!((plan.pilot_ratio() - (13.0 * 2.0 * 4.0) / (64.0 * 16.0)).abs() < 1e-15);
        let (m_t, m_r) = pilot_dims_for_ratio(&ArrayConfig::desk(), 0.8).unwrap();
        assert_eq!((m_t, m_r), (26, 4));
    }

    #[test]
    fn measurement_matrix_shape_and_vec_identity() {
        let (cfg, plan, rx, tx) = desk_plan(11);
        let phi = build_measurement_matrix(&plan, &rx, &tx).unwrap();
        assert_eq!(
            phi.shape(),
            (plan.m_t * plan.m_r * plan.l_r, cfg.n_t * cfg.n_r)
        );
        assert!(phi.iter().all(|z| z.re.is_finite() && z.im.is_finite()));

        let zero = CVector::zeros(cfg.n_t * cfg.n_r);
        assert!(matvec(&phi, &zero).iter().all(|z| *z == ZERO));

        let mut rng = seeded(12);
        for _ in 0..5 {
            let hb = complex_normal_vec(&mut rng, cfg.n_t * cfg.n_r, 1.0);
            let hb_m = unvec(&hb, cfg.n_r, cfg.n_t).unwrap();
            // direct evaluation Wᴴ Ā_R H̄_b Ā_Tᴴ P with nalgebra's own products
            let direct = plan.w.adjoint() * rx.matrix() * &hb_m * tx.matrix().adjoint() * &plan.p;
            let lhs = matvec(&phi, &hb);
            assert!(max_abs_diff(lhs.as_slice(), vec_of(&direct).as_slice()) < 1e-10);
        }
    }

    #[test]
    fn vec_identity_over_many_random_plans() {
        let cfg = ArrayConfig::new(
            8,
            4,
            2,
            1,
            2,
            2,
            crate::geometry::SubarrayShape::new(2, 2),
            crate::geometry::SubarrayShape::new(2, 2),
        )
        .unwrap();
        let (rx, tx) = cfg.codebooks().unwrap();
        let mut rng = seeded(99);
        for _ in 0..100 {
            let m_t = rng.random_range(1..=8);
            let m_r = rng.random_range(1..=3);
            let plan = sample_pilot_plan(&mut rng, &cfg, m_t, m_r, 3).unwrap();
            let phi = build_measurement_matrix(&plan, &rx, &tx).unwrap();
            let hb = complex_normal_vec(&mut rng, 32, 1.0);
            let hb_m = unvec(&hb, 4, 8).unwrap();
            let direct = plan.w.adjoint() * rx.matrix() * &hb_m * tx.matrix().adjoint() * &plan.p;
            assert!(max_abs_diff(matvec(&phi, &hb).as_slice(), vec_of(&direct).as_slice()) < 1e-10);
        }
    }

    #[test]
    fn noiseless_measurement_is_exact() {
        let (cfg, plan, rx, tx) = desk_plan(2);
        let phi = build_measurement_matrix(&plan, &rx, &tx).unwrap();
        let hb = complex_normal_vec(&mut seeded(3), cfg.n_t * cfg.n_r, 1.0);
        let m = measure(&hb, &plan, &phi, 0.0, f64::INFINITY, &mut seeded(4)).unwrap();
        assert_eq!(m.y, matvec(&phi, &hb));
    }

    #[test]
    fn noise_energy_scales_linearly_with_variance() {
        let cfg = ArrayConfig::new(
            4,
            4,
            1,
            1,
            1,
            2,
            crate::geometry::SubarrayShape::new(2, 2),
            crate::geometry::SubarrayShape::new(2, 2),
        )
        .unwrap();
        let plan = sample_pilot_plan(&mut seeded(7), &cfg, 3, 2, 4).unwrap();
        let rows = plan.rows() as f64;
        let mut rng = seeded(8);
        for var in [0.5, 1.0, 2.0, 4.0] {
            let trials = 1000;
            let mut acc = 0.0;
            for _ in 0..trials {
                acc += norm_sq(combined_noise(&mut rng, &plan, libm::sqrt(var)).as_slice());
            }
            let mean = acc / trials as f64;
            // E‖n‖² = σ² Σ_r ‖W_r‖²_F M_t = σ² · rows
            assert!(
                (mean / (var * rows) - 1.0).abs() < 0.05,
                "var {var}: {mean}"
            );
        }
    }

    #[test]
    fn combined_noise_covariance_matches_structure() {
        let cfg = ArrayConfig::new(
            4,
            4,
            1,
            1,
            1,
            2,
            crate::geometry::SubarrayShape::new(2, 2),
            crate::geometry::SubarrayShape::new(2, 2),
        )
        .unwrap();
        let plan = sample_pilot_plan(&mut seeded(17), &cfg, 2, 2, 3).unwrap();
        let sigma = 0.7;
        let expected = plan.noise_structure() * C64::new(sigma * sigma, 0.0);
        let n = plan.rows();
        let mut cov = CMatrix::zeros(n, n);
        let mut rng = seeded(18);
        let draws = 10_000;
        for _ in 0..draws {
            let v = combined_noise(&mut rng, &plan, sigma);
            cov += &v * v.adjoint();
        }
        cov /= C64::new(draws as f64, 0.0);
        let rel = (&cov - &expected).norm() / expected.norm();
        assert!(rel < 0.05, "relative covariance error {rel}");
    }

    #[test]
    fn snr_reference_matches_ensemble_ratio() {
        let (cfg, _, rx, tx) = desk_plan(0);
        let mut rng = seeded(21);
        let dim = cfg.n_t * cfg.n_r;
        let var = noise_variance_for_snr(10.0, dim as f64, cfg.n_t, cfg.n_r, 1.0).unwrap();
        let (m_t, m_r) = pilot_dims_for_ratio(&cfg, 0.8).unwrap();
        let (mut sig, mut noise) = (0.0, 0.0);
        for _ in 0..40 {
            let plan = sample_pilot_plan(&mut rng, &cfg, m_t, m_r, 4).unwrap();
            let phi = build_measurement_matrix(&plan, &rx, &tx).unwrap();
            let h = complex_normal_vec(&mut rng, dim, 1.0);
            sig += norm_sq(matvec(&phi, &h).as_slice());
            noise += norm_sq(combined_noise(&mut rng, &plan, libm::sqrt(var)).as_slice());
        }
        let snr = 10.0 * libm::log10(sig / noise);
        assert!((snr - 10.0).abs() < 0.3, "empirical SNR {snr}");
    }

    #[test]
    fn nmse_cases() {
        let h: Vec<C64> = (0..10).map(|i| C64::new(i as f64 + 1.0, -1.0)).collect();
        assert_eq!(nmse(&h, &h).unwrap(), NMSE_FLOOR_DB);
        let zero = alloc::vec![ZERO; 10];
        assert!(nmse(&h, &zero).unwrap().abs() < 1e-12);
        let scale = libm::sqrt(0.1);
        let est: Vec<C64> = h.iter().map(|z| z * (1.0 + scale)).collect();
        assert!((nmse(&h, &est).unwrap() + 10.0).abs() < 1e-10);
        assert!(nmse(&zero, &h).is_err());
    }
}
