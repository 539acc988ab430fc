//! Noise schedules, the trainable denoiser prior, and score functions.
//!
//! Complex scores follow the Wirtinger convention `s = ∂ log p / ∂h*`, under
//! which a Gaussian marginal `CN(μ, C)` has score `−C⁻¹(h − μ)` and the
//! denoiser relation reads `D(h_t, σ) = h_t + σ² s(h_t, σ)`.

pub mod network;
mod train;

pub use network::{
    backward, forward, init_params, pack_sample, unpack_sample, Arch, Tape, DECODER_LAYERS,
    ENCODER_LAYERS,
};
pub use train::{
    batch_loss, ema_update, train, train_step, Adam, EpochStats, TrainConfig, TrainReport,
    TrainState,
};

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{ensure, Error, Result};
use crate::linalg::{
    add_diagonal, cholesky, hermitian_defect, hermitian_eigen, matvec, matvec_adj, mean_diagonal,
    CMatrix, CVector, C64,
};
use crate::rng::complex_normal;

/// Descending noise levels `σ_{t_K} > … > σ_{t_1} > σ_{t_0} = 0`.
///
/// With `σ(t) = t` the time grid and the sigma grid coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
}

impl NoiseSchedule {
    /// Wraps an explicit descending grid ending in zero.
    pub fn from_sigmas(sigmas: Vec<f64>) -> Result<Self> {
        ensure!(sigmas.len() >= 2, "a schedule needs at least one step");
        ensure!(
            *sigmas.last().unwrap() == 0.0,
            "the last noise level must be exactly 0"
        );
        ensure!(
            sigmas.iter().all(|s| s.is_finite()),
            "noise levels must be finite"
        );
        ensure!(
            sigmas.windows(2).all(|w| w[0] > w[1]),
            "noise levels must be strictly decreasing"
        );
        Ok(Self { sigmas })
    }

    /// Number of steps `K`.
    pub fn steps(&self) -> usize {
        self.sigmas.len() - 1
    }

    /// All levels, from `σ_{t_K}` down to `σ_{t_0} = 0`.
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// `σ_{t_i}` for `i ∈ 0..=K`.
    pub fn sigma(&self, i: usize) -> f64 {
        self.sigmas[self.steps() - i]
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigmas[0]
    }
}

/// Geometric grid `σ_{t_i} = σ_max (σ_min/σ_max)^{(K−i)/(K−1)}` for
/// `i = K..1`, followed by `σ_{t_0} = 0`.
pub fn make_schedule(k: usize, sigma_min: f64, sigma_max: f64) -> Result<NoiseSchedule> {
    ensure!(k >= 1, "need at least one step");
    ensure!(
        sigma_min.is_finite() && sigma_max.is_finite() && sigma_min > 0.0 && sigma_min < sigma_max,
        "need 0 < sigma_min < sigma_max, got [{sigma_min}, {sigma_max}]"
    );
    let mut sigmas = Vec::with_capacity(k + 1);
    if k == 1 {
        sigmas.push(sigma_max);
    } else {
        let ratio = sigma_min / sigma_max;
        for j in 0..k {
            // j = K − i counts down from the top level
            let frac = j as f64 / (k - 1) as f64;
            sigmas.push(sigma_max * libm::pow(ratio, frac));
        }
        sigmas[k - 1] = sigma_min;
    }
    sigmas.push(0.0);
    NoiseSchedule::from_sigmas(sigmas)
}

/// The ascending geometric grid of `count` training noise levels.
pub fn training_levels(count: usize, sigma_min: f64, sigma_max: f64) -> Result<Vec<f64>> {
    ensure!(count >= 1, "need at least one training level");
    ensure!(
        sigma_min > 0.0 && sigma_min <= sigma_max && sigma_max.is_finite(),
        "need 0 < sigma_min <= sigma_max"
    );
    if count == 1 {
        return Ok(alloc::vec![sigma_max]);
    }
    let ratio = sigma_max / sigma_min;
    Ok((0..count)
        .map(|i| sigma_min * libm::pow(ratio, i as f64 / (count - 1) as f64))
        .collect())
}

/// `h_t = h + σ n` with `n ~ CN(0, I)`.
pub fn perturb<R: Rng + ?Sized>(h: &CVector, sigma: f64, rng: &mut R) -> Result<CVector> {
    ensure!(
        sigma.is_finite() && sigma >= 0.0,
        "sigma must be >= 0, got {sigma}"
    );
    Ok(CVector::from_fn(h.len(), |i, _| {
        h[i] + complex_normal(rng, 1.0) * sigma
    }))
}

/// `(D − h_t) / σ²`.
pub fn score_from_denoiser(denoised: &CVector, h_t: &CVector, sigma: f64) -> Result<CVector> {
    ensure!(
        sigma.is_finite() && sigma > 0.0,
        "score needs sigma > 0, got {sigma}"
    );
    ensure!(denoised.len() == h_t.len(), "length mismatch");
    Ok((denoised - h_t) / C64::new(sigma * sigma, 0.0))
}

/// Score of `CN(μ, Σ + σ²I)` at `h_t`: `−(Σ + σ²I)⁻¹(h_t − μ)`.
///
/// Solved by Cholesky; if the matrix is numerically singular it is loaded
/// with `1e-12 · max(mean diag, 1)` first.
pub fn gaussian_exact_score(
    mu: &CVector,
    sigma_cov: &CMatrix,
    h_t: &CVector,
    sigma: f64,
) -> Result<CVector> {
    let n = mu.len();
    ensure!(
        sigma_cov.shape() == (n, n) && h_t.len() == n,
        "dimension mismatch between mean, covariance and input"
    );
    ensure!(sigma.is_finite() && sigma >= 0.0, "sigma must be >= 0");
    let mut c = sigma_cov.clone();
    add_diagonal(&mut c, sigma * sigma);
    let diff = h_t - mu;
    let chol = match cholesky(&c) {
        Some(ch) => ch,
        None => {
            add_diagonal(&mut c, 1e-12 * mean_diagonal(sigma_cov).max(1.0));
            cholesky(&c)
                .ok_or_else(|| Error::Numerical("covariance is not positive semidefinite".into()))?
        }
    };
    Ok(-chol.solve(&diff))
}

/// Gaussian prior `CN(μ, Σ)` with a cached eigendecomposition, so scores
/// and posterior means at any σ cost two matrix-vector products.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mean: CVector,
    eigvals: Vec<f64>,
    eigvecs: CMatrix,
}

impl GaussianPrior {
    pub fn new(mean: CVector, covariance: &CMatrix) -> Result<Self> {
        let n = mean.len();
        ensure!(covariance.shape() == (n, n), "covariance must be {n}x{n}");
        let scale = covariance.iter().map(|z| z.norm()).fold(1.0, f64::max);
        ensure!(
            hermitian_defect(covariance) <= 1e-10 * scale,
            "covariance is not Hermitian"
        );
        let eig = hermitian_eigen(covariance);
        ensure!(
            eig.values.iter().all(|v| *v >= -1e-10 * scale),
            "covariance has a negative eigenvalue"
        );
        Ok(Self {
            mean,
            eigvals: eig.values.iter().map(|v| v.max(0.0)).collect(),
            eigvecs: eig.vectors,
        })
    }

    pub fn mean(&self) -> &CVector {
        &self.mean
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn apply_spectral(&self, v: &CVector, f: impl Fn(f64) -> f64) -> CVector {
        let mut coeff = matvec_adj(&self.eigvecs, v);
        for (c, l) in coeff.iter_mut().zip(&self.eigvals) {
            *c *= f(*l);
        }
        matvec(&self.eigvecs, &coeff)
    }

    /// `−(Σ + σ²I)⁻¹(h_t − μ)`.
    pub fn score(&self, h_t: &CVector, sigma: f64) -> Result<CVector> {
        ensure!(
            h_t.len() == self.dim(),
            "input length {} != {}",
            h_t.len(),
            self.dim()
        );
        let s2 = sigma * sigma;
        ensure!(
            s2 > 0.0 || self.eigvals.iter().all(|l| *l > 0.0),
            "score at sigma = 0 needs a non-singular covariance"
        );
        let diff = h_t - &self.mean;
        Ok(-self.apply_spectral(&diff, |l| 1.0 / (l + s2)))
    }

    /// Posterior mean `E[h | h_t] = μ + Σ(Σ + σ²I)⁻¹(h_t − μ)`.
    pub fn posterior_mean(&self, h_t: &CVector, sigma: f64) -> Result<CVector> {
        ensure!(
            h_t.len() == self.dim(),
            "input length {} != {}",
            h_t.len(),
            self.dim()
        );
        let s2 = sigma * sigma;
        let diff = h_t - &self.mean;
        Ok(&self.mean
            + self.apply_spectral(&diff, |l| if l + s2 > 0.0 { l / (l + s2) } else { 0.0 }))
    }

    /// Draw from `CN(μ, Σ)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> CVector {
        let mut coeff = CVector::zeros(self.dim());
        for (c, l) in coeff.iter_mut().zip(&self.eigvals) {
            *c = complex_normal(rng, *l);
        }
        &self.mean + matvec(&self.eigvecs, &coeff)
    }
}

/// Trained denoiser: architecture, parameters, EMA shadow and the data
/// normalization scale.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    pub arch: Arch,
    pub theta: Vec<f64>,
    pub theta_ema: Vec<f64>,
    pub ema_rate: f64,
    /// Per-entry RMS of the training data; inputs are divided by it.
    pub scale: f64,
    /// Training noise range in normalized units.
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub seed: u64,
    pub epoch: usize,
}

impl DenoiserModel {
    pub fn new<R: Rng + ?Sized>(arch: Arch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let theta = init_params(&arch, rng);
        Ok(Self {
            arch,
            theta_ema: theta.clone(),
            theta,
            ema_rate: 0.999,
            scale: 1.0,
            sigma_min: 0.01,
            sigma_max: 1.0,
            seed: 0,
            epoch: 0,
        })
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    /// Samples per forward call when denoising many vectors.
    const CHUNK: usize = 16;

    /// `D(h_t, σ)` in data units with the given parameter vector; `σ` is
    /// also in data units.
    pub fn denoise_with(
        &self,
        params: &[f64],
        h_t: &[CVector],
        sigma: f64,
    ) -> Result<Vec<CVector>> {
        ensure!(sigma.is_finite() && sigma >= 0.0, "sigma must be >= 0");
        let dim = self.arch.rows * self.arch.cols;
        let mut out = Vec::with_capacity(h_t.len());
        let inv = 1.0 / self.scale;
        for chunk in h_t.chunks(Self::CHUNK) {
            let b = chunk.len();
            let mut x = alloc::vec![0.0; 2 * b * dim];
            for (i, h) in chunk.iter().enumerate() {
                ensure!(h.len() == dim, "input length {} != {dim}", h.len());
                pack_sample(&self.arch, &(h * C64::new(inv, 0.0)), b, i, &mut x);
            }
            let sig = alloc::vec![sigma * inv; b];
            let (y, _) = forward(&self.arch, params, &x, &sig)?;
            for i in 0..b {
                out.push(unpack_sample(&self.arch, &y, b, i) * C64::new(self.scale, 0.0));
            }
        }
        Ok(out)
    }

    /// `D(h_t, σ)` with the EMA parameters, in data units.
    pub fn denoise(&self, h_t: &CVector, sigma: f64) -> Result<CVector> {
        let mut v = self.denoise_with(&self.theta_ema, core::slice::from_ref(h_t), sigma)?;
        Ok(v.pop().unwrap())
    }

    /// `(D(h_t, σ) − h_t) / σ²` with the EMA parameters.
    pub fn score(&self, h_t: &CVector, sigma: f64) -> Result<CVector> {
        ensure!(sigma > 0.0, "score needs sigma > 0");
        let d = self.denoise(h_t, sigma)?;
        score_from_denoiser(&d, h_t, sigma)
    }
}
