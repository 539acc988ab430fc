//! Plug-and-play estimator: alternating probability-flow prior steps with
//! data-consistency projections, plus the unconditional Euler ODE sampler.
//!
//! Complex data needs the conjugate transpose in the projection, so the
//! correction is `ρ Φᴴ(ΦΦᴴ)⁻¹(y − Φz)`.

use alloc::vec::Vec;

use rand::Rng;

use crate::diffusion::{DenoiserModel, GaussianPrior, NoiseSchedule};
use crate::error::{ensure, Error, Result};
use crate::linalg::{matvec, norm_sq, CMatrix, CVector, GramFactor, C64};
use crate::measurement::MeasurementSet;
use crate::rng::{complex_normal, seeded};

/// Band defaults for `(λ, β)`.
pub const MMWAVE_LAMBDA: f64 = 0.006;
pub const MMWAVE_BETA: f64 = 0.05;
pub const THZ_LAMBDA: f64 = 0.001;
pub const THZ_BETA: f64 = 0.03;

/// Loading applied to `ΦΦᴴ` when it is not safely invertible, relative to
/// its mean diagonal.
pub const GRAM_LOADING: f64 = 1e-10;

/// Anything that can evaluate `s(h_t, σ)` for `σ > 0`. Implementations
/// must tolerate concurrent calls.
pub trait ScoreSource: Sync {
    fn score(&self, h_t: &CVector, sigma: f64) -> Result<CVector>;
}

impl ScoreSource for DenoiserModel {
    fn score(&self, h_t: &CVector, sigma: f64) -> Result<CVector> {
        DenoiserModel::score(self, h_t, sigma)
    }
}

impl ScoreSource for GaussianPrior {
    fn score(&self, h_t: &CVector, sigma: f64) -> Result<CVector> {
        GaussianPrior::score(self, h_t, sigma)
    }
}

/// Score of a point mass at `h` after noising: `−(h_t − h)/σ²`.
pub struct PointMassScore(pub CVector);

impl ScoreSource for PointMassScore {
    fn score(&self, h_t: &CVector, sigma: f64) -> Result<CVector> {
        ensure!(sigma > 0.0, "score needs sigma > 0");
        ensure!(h_t.len() == self.0.len(), "length mismatch");
        Ok((&self.0 - h_t) / C64::new(sigma * sigma, 0.0))
    }
}

/// The flat prior.
pub struct ZeroScore;

impl ScoreSource for ZeroScore {
    fn score(&self, h_t: &CVector, _sigma: f64) -> Result<CVector> {
        Ok(CVector::zeros(h_t.len()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub schedule: NoiseSchedule,
    pub lambda: f64,
    pub beta: f64,
    /// Seed of the initial draw `h_{t_K}`.
    pub seed: u64,
}

impl SolverConfig {
    pub fn new(schedule: NoiseSchedule, lambda: f64, beta: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            schedule,
            lambda,
            beta,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.lambda.is_finite() && self.lambda > 0.0,
            "lambda must be positive, got {}",
            self.lambda
        );
        ensure!(
            self.beta.is_finite() && self.beta >= 0.0,
            "beta must be >= 0, got {}",
            self.beta
        );
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps()
    }
}

/// `Δσ_{t_i} = σ_{t_i}(σ_{t_i} − σ_{t_{i−1}})` for `1 ≤ i ≤ K`.
pub fn delta_sigma(schedule: &NoiseSchedule, i: usize) -> Result<f64> {
    ensure!(
        (1..=schedule.steps()).contains(&i),
        "step index {i} outside 1..={}",
        schedule.steps()
    );
    let s = schedule.sigma(i);
    Ok(s * (s - schedule.sigma(i - 1)))
}

/// `ρ_i = Δσ_{t_i} / (2λσ_n² + βσ_{t_i}²)`.
pub fn rho(
    schedule: &NoiseSchedule,
    i: usize,
    lambda: f64,
    beta: f64,
    sigma_n: f64,
) -> Result<f64> {
    let d = delta_sigma(schedule, i)?;
    let s = schedule.sigma(i);
    let denom = 2.0 * lambda * sigma_n * sigma_n + beta * s * s;
    ensure!(
        denom.is_finite() && denom > 0.0,
        "step-size denominator 2λσ_n² + βσ² is {denom}"
    );
    Ok(d / denom)
}

/// `z = h_t + Δσ · s(h_t, σ)`.
pub fn prior_step<S: ScoreSource + ?Sized>(
    score: &S,
    h_t: &CVector,
    sigma: f64,
    delta: f64,
) -> Result<CVector> {
    ensure!(sigma > 0.0, "prior step needs sigma > 0");
    let s = score.score(h_t, sigma)?;
    ensure!(
        s.len() == h_t.len(),
        "score has length {} != {}",
        s.len(),
        h_t.len()
    );
    if s.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical(alloc::format!(
            "non-finite score at sigma = {sigma} (input norm {})",
            libm::sqrt(norm_sq(h_t.as_slice()))
        )));
    }
    Ok(h_t + s * C64::new(delta, 0.0))
}

/// Precomputed `Φ` with a factorization of `ΦΦᴴ`.
pub struct ConsistencyOperator {
    gram: GramFactor,
}

impl ConsistencyOperator {
    pub fn new(phi: &CMatrix) -> Result<Self> {
        ensure!(
            phi.nrows() <= phi.ncols(),
            "projection needs at most as many rows as columns, got {}x{}",
            phi.nrows(),
            phi.ncols()
        );
        Ok(Self {
            gram: GramFactor::new(phi, GRAM_LOADING)?,
        })
    }

    pub fn phi(&self) -> &CMatrix {
        self.gram.phi()
    }

    /// The cached factorization, shared with other estimators on this `Φ`.
    pub fn gram(&self) -> &GramFactor {
        &self.gram
    }

    /// `ΦΦᴴ` was not safely invertible and diagonal loading was applied.
    pub fn loaded(&self) -> bool {
        self.gram.loaded()
    }

    /// `y − Φz`.
    pub fn residual(&self, z: &CVector, y: &CVector) -> CVector {
        y - matvec(self.phi(), z)
    }

    /// `z + ρ Φᴴ(ΦΦᴴ)⁻¹(y − Φz)`.
    pub fn project(&self, z: &CVector, y: &CVector, rho: f64) -> Result<CVector> {
        ensure!(
            y.len() == self.phi().nrows() && z.len() == self.phi().ncols(),
            "dimension mismatch in projection"
        );
        if rho == 0.0 {
            return Ok(z.clone());
        }
        let corr = self.gram.back_project(&self.residual(z, y));
        Ok(z + corr * C64::new(rho, 0.0))
    }
}

/// One-off projection; factorizes `ΦΦᴴ` on every call.
pub fn consistency_project(z: &CVector, y: &CVector, phi: &CMatrix, rho: f64) -> Result<CVector> {
    ConsistencyOperator::new(phi)?.project(z, y, rho)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub i: usize,
    pub sigma: f64,
    pub rho: f64,
    /// `‖y − Φh‖` after the step.
    pub residual: f64,
    /// `‖h_next − h‖`.
    pub step_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOutput {
    pub estimate: CVector,
    pub steps: Vec<StepRecord>,
    /// The Gram matrix needed diagonal loading.
    pub loaded: bool,
}

/// Estimate with a fresh factorization of the measurement's `Φ`.
pub fn diffpace_estimate<S: ScoreSource + ?Sized>(
    score: &S,
    measurement: &MeasurementSet,
    cfg: &SolverConfig,
) -> Result<SolverOutput> {
    let op = ConsistencyOperator::new(&measurement.phi)?;
    diffpace_estimate_with(score, &op, &measurement.y, measurement.sigma_n, cfg)
}

/// The estimator loop, `i = K … 1`, reusing a cached operator.
pub fn diffpace_estimate_with<S: ScoreSource + ?Sized>(
    score: &S,
    op: &ConsistencyOperator,
    y: &CVector,
    sigma_n: f64,
    cfg: &SolverConfig,
) -> Result<SolverOutput> {
    cfg.validate()?;
    ensure!(
        y.len() == op.phi().nrows(),
        "observation length {} does not match Φ",
        y.len()
    );
    ensure!(
        sigma_n.is_finite() && sigma_n >= 0.0,
        "noise std must be >= 0"
    );
    let dim = op.phi().ncols();
    let k = cfg.schedule.steps();
    let mut rng = seeded(cfg.seed);
    let var = cfg.schedule.sigma_max() * cfg.schedule.sigma_max();
    let mut h = CVector::from_fn(dim, |_, _| complex_normal(&mut rng, var));
    let mut steps = Vec::with_capacity(k);
    for i in (1..=k).rev() {
        let sigma = cfg.schedule.sigma(i);
        let delta = delta_sigma(&cfg.schedule, i)?;
        let r = rho(&cfg.schedule, i, cfg.lambda, cfg.beta, sigma_n)?;
        let z = prior_step(score, &h, sigma, delta)?;
        let next = op.project(&z, y, r)?;
        let step_norm = libm::sqrt(norm_sq((&next - &h).as_slice()));
        let residual = libm::sqrt(norm_sq(op.residual(&next, y).as_slice()));
        if !residual.is_finite() {
            return Err(Error::Numerical(alloc::format!(
                "solver diverged at step {i} (sigma {sigma}, rho {r})"
            )));
        }
        steps.push(StepRecord {
            i,
            sigma,
            rho: r,
            residual,
            step_norm,
        });
        h = next;
    }
    Ok(SolverOutput {
        estimate: h,
        steps,
        loaded: op.loaded(),
    })
}

/// Unconditional draw: Euler steps `h ← h + Δσ_{t_i} s(h, σ_{t_i})` down
/// the schedule from `h ~ CN(0, σ_max² I)`.
pub fn ode_sample<S: ScoreSource + ?Sized, R: Rng + ?Sized>(
    score: &S,
    schedule: &NoiseSchedule,
    dim: usize,
    rng: &mut R,
) -> Result<CVector> {
    let var = schedule.sigma_max() * schedule.sigma_max();
    let init = CVector::from_fn(dim, |_, _| complex_normal(rng, var));
    ode_integrate(score, schedule, init)
}

/// The deterministic part of [`ode_sample`], starting from `h`.
pub fn ode_integrate<S: ScoreSource + ?Sized>(
    score: &S,
    schedule: &NoiseSchedule,
    mut h: CVector,
) -> Result<CVector> {
    for i in (1..=schedule.steps()).rev() {
        let delta = delta_sigma(schedule, i)?;
        h = prior_step(score, &h, schedule.sigma(i), delta)?;
    }
    Ok(h)
}
