//! Denoising score-matching trainer: Adam, EMA and the epoch loop.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use super::network::{backward, forward, pack_sample, Arch};
use super::{training_levels, DenoiserModel};
use crate::error::{ensure, Error, Result};
use crate::linalg::{norm_sq, CVector, C64};
use crate::rng::{complex_normal, derive_path, derive_seed, purpose, seeded};

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: alloc::vec![0.0; len],
            v: alloc::vec![0.0; len],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
    }
}

/// `θ′ ← m θ′ + (1 − m) θ`.
pub fn ema_update(theta_ema: &mut [f64], theta: &[f64], m: f64) -> Result<()> {
    ensure!(
        (0.0..1.0).contains(&m),
        "EMA rate must lie in [0, 1), got {m}"
    );
    ensure!(theta_ema.len() == theta.len(), "parameter length mismatch");
    for (e, t) in theta_ema.iter_mut().zip(theta) {
        *e = m * *e + (1.0 - m) * t;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ema_rate: f64,
    /// Number of geometric training noise levels.
    pub levels: usize,
    /// Lower end of the training noise range in normalized units;
    /// defaults to 0.01.
    pub sigma_min: Option<f64>,
    /// Upper end in normalized units; defaults to twice the largest
    /// per-sample RMS of the normalized training set.
    pub sigma_max: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-4,
            ema_rate: 0.999,
            levels: 1000,
            sigma_min: None,
            sigma_max: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, "batch size must be positive");
        ensure!(
            self.learning_rate.is_finite() && self.learning_rate > 0.0,
            "learning rate must be positive"
        );
        ensure!(
            (0.0..1.0).contains(&self.ema_rate),
            "EMA rate must lie in [0, 1)"
        );
        ensure!(self.levels >= 1, "need at least one training noise level");
        if let (Some(lo), Some(hi)) = (self.sigma_min, self.sigma_max) {
            ensure!(lo > 0.0 && lo < hi, "need 0 < sigma_min < sigma_max");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Loss of the EMA parameters on the held-out set (NaN without one).
    pub test_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    /// Epoch (1-based) whose EMA parameters were kept; 0 if none ran.
    pub best_epoch: usize,
    pub scale: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
}

/// Mutable training state: model, optimizer and the level grid.
pub struct TrainState {
    pub model: DenoiserModel,
    pub adam: Adam,
    pub levels: Vec<f64>,
}

fn pack_batch(arch: &Arch, batch: &[&CVector]) -> Vec<f64> {
    let dim = arch.rows * arch.cols;
    let mut x = alloc::vec![0.0; 2 * batch.len() * dim];
    for (i, h) in batch.iter().enumerate() {
        pack_sample(arch, h, batch.len(), i, &mut x);
    }
    x
}

/// Mean per-sample `‖D(h + σn, σ) − h‖²` for fixed noise draws, in
/// normalized units.
pub fn batch_loss(
    arch: &Arch,
    params: &[f64],
    clean: &[&CVector],
    noise: &[&CVector],
    sigmas: &[f64],
) -> Result<f64> {
    ensure!(
        clean.len() == noise.len() && clean.len() == sigmas.len() && !clean.is_empty(),
        "batch components disagree in length"
    );
    let noisy: Vec<CVector> = clean
        .iter()
        .zip(noise)
        .zip(sigmas)
        .map(|((h, n), s)| *h + *n * C64::new(*s, 0.0))
        .collect();
    let refs: Vec<&CVector> = noisy.iter().collect();
    let x = pack_batch(arch, &refs);
    let target = pack_batch(arch, clean);
    let (out, _) = forward(arch, params, &x, sigmas)?;
    let sq: f64 = out
        .iter()
        .zip(&target)
        .map(|(o, t)| (o - t) * (o - t))
        .sum();
    Ok(sq / clean.len() as f64)
}

/// One optimization step on a batch of normalized clean samples. Returns
/// the batch loss before the update.
pub fn train_step<R: Rng + ?Sized>(
    state: &mut TrainState,
    batch: &[&CVector],
    rng: &mut R,
) -> Result<f64> {
    ensure!(!batch.is_empty(), "empty batch");
    let arch = state.model.arch;
    let dim = arch.rows * arch.cols;
    let b = batch.len();
    let mut sigmas = Vec::with_capacity(b);
    let mut noisy = Vec::with_capacity(b);
    for h in batch {
        ensure!(h.len() == dim, "sample length {} != {dim}", h.len());
        let s = state.levels[rng.random_range(0..state.levels.len())];
        sigmas.push(s);
        noisy.push(CVector::from_fn(dim, |i, _| {
            h[i] + complex_normal(rng, 1.0) * s
        }));
    }
    let refs: Vec<&CVector> = noisy.iter().collect();
    let x = pack_batch(&arch, &refs);
    let target = pack_batch(&arch, batch);
    let (out, tape) = forward(&arch, &state.model.theta, &x, &sigmas)?;
    let sq: f64 = out
        .iter()
        .zip(&target)
        .map(|(o, t)| (o - t) * (o - t))
        .sum();
    let loss = sq / b as f64;
    if !loss.is_finite() {
        return Err(Error::Numerical(alloc::format!(
            "non-finite training loss after {} optimizer steps (sigmas {:?})",
            state.adam.steps_taken(),
            sigmas
        )));
    }
    let g_out: Vec<f64> = out
        .iter()
        .zip(&target)
        .map(|(o, t)| 2.0 * (o - t) / b as f64)
        .collect();
    let grad = backward(&arch, &state.model.theta, &tape, &g_out);
    state.adam.step(&mut state.model.theta, &grad);
    let m = state.model.ema_rate;
    ema_update(&mut state.model.theta_ema, &state.model.theta, m)?;
    Ok(loss)
}

/// Held-out evaluation set with frozen noise draws.
struct TestSet {
    clean: Vec<CVector>,
    noise: Vec<CVector>,
    sigmas: Vec<f64>,
}

impl TestSet {
    fn new(clean: Vec<CVector>, levels: &[f64], seed: u64) -> Self {
        let mut rng = seeded(derive_seed(seed, purpose::TEST_NOISE));
        let mut noise = Vec::with_capacity(clean.len());
        let mut sigmas = Vec::with_capacity(clean.len());
        for h in &clean {
            sigmas.push(levels[rng.random_range(0..levels.len())]);
            noise.push(CVector::from_fn(h.len(), |_, _| {
                complex_normal(&mut rng, 1.0)
            }));
        }
        Self {
            clean,
            noise,
            sigmas,
        }
    }

    fn loss(&self, arch: &Arch, params: &[f64], batch: usize) -> Result<f64> {
        if self.clean.is_empty() {
            return Ok(f64::NAN);
        }
        let mut total = 0.0;
        for start in (0..self.clean.len()).step_by(batch) {
            let end = (start + batch).min(self.clean.len());
            let c: Vec<&CVector> = self.clean[start..end].iter().collect();
            let n: Vec<&CVector> = self.noise[start..end].iter().collect();
            total +=
                batch_loss(arch, params, &c, &n, &self.sigmas[start..end])? * (end - start) as f64;
        }
        Ok(total / self.clean.len() as f64)
    }
}

/// Trains a denoiser on `train_set` (data units), evaluating the EMA
/// parameters on `test_set` after every epoch.
///
/// The returned model's `theta_ema` holds the EMA parameters with the
/// lowest test loss (the last ones without a test set); `theta` holds the
/// final raw parameters. `on_epoch` sees the model after each epoch.
pub fn train(
    train_set: &[CVector],
    test_set: &[CVector],
    arch: Arch,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&DenoiserModel, &EpochStats) -> Result<()>,
) -> Result<(DenoiserModel, TrainReport)> {
    cfg.validate()?;
    arch.validate()?;
    ensure!(
        train_set.len() >= cfg.batch_size,
        "training set ({}) smaller than the batch size ({})",
        train_set.len(),
        cfg.batch_size
    );
    let dim = arch.rows * arch.cols;
    ensure!(
        train_set.iter().chain(test_set).all(|h| h.len() == dim),
        "samples must have length {dim}"
    );

    let energy: f64 = train_set.iter().map(|h| norm_sq(h.as_slice())).sum();
    let scale = libm::sqrt(energy / (train_set.len() * dim) as f64);
    ensure!(
        scale > 0.0 && scale.is_finite(),
        "training data has zero energy"
    );
    let inv = C64::new(1.0 / scale, 0.0);
    let train_n: Vec<CVector> = train_set.iter().map(|h| h * inv).collect();
    let test_n: Vec<CVector> = test_set.iter().map(|h| h * inv).collect();

    let max_rms = train_n
        .iter()
        .map(|h| libm::sqrt(norm_sq(h.as_slice()) / dim as f64))
        .fold(0.0, f64::max);
    let sigma_min = cfg.sigma_min.unwrap_or(0.01);
    let sigma_max = cfg.sigma_max.unwrap_or(2.0 * max_rms);
    ensure!(
        sigma_min > 0.0 && sigma_min < sigma_max,
        "training noise range [{sigma_min}, {sigma_max}] is empty"
    );
    let levels = training_levels(cfg.levels, sigma_min, sigma_max)?;

    let mut model =
        DenoiserModel::new(arch, &mut seeded(derive_seed(cfg.seed, purpose::NET_INIT)))?;
    model.ema_rate = cfg.ema_rate;
    model.scale = scale;
    model.sigma_min = sigma_min;
    model.sigma_max = sigma_max;
    model.seed = cfg.seed;
    let n_params = model.param_count();
    let mut state = TrainState {
        model,
        adam: Adam::new(n_params, cfg.learning_rate),
        levels,
    };
    let test = TestSet::new(test_n, &state.levels, cfg.seed);

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Vec<f64>, usize)> = None;
    let mut order: Vec<usize> = (0..train_n.len()).collect();
    for epoch in 1..=cfg.epochs {
        let mut rng = seeded(derive_path(cfg.seed, &[purpose::TRAIN, epoch as u64]));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&CVector> = chunk.iter().map(|&i| &train_n[i]).collect();
            total += train_step(&mut state, &batch, &mut rng)? * chunk.len() as f64;
            seen += chunk.len();
        }
        let test_loss = test.loss(&arch, &state.model.theta_ema, cfg.batch_size)?;
        if test_loss.is_nan() && !test.clean.is_empty() {
            return Err(Error::Numerical(alloc::format!(
                "test loss is NaN at epoch {epoch}"
            )));
        }
        let stats = EpochStats {
            epoch,
            train_loss: total / seen as f64,
            test_loss,
        };
        state.model.epoch = epoch;
        let improved = match &best {
            None => true,
            Some((b, _, _)) => test.clean.is_empty() || test_loss < *b,
        };
        if improved {
            best = Some((test_loss, state.model.theta_ema.clone(), epoch));
        }
        history.push(stats);
        on_epoch(&state.model, &stats)?;
    }

    let mut model = state.model;
    let best_epoch = match best {
        Some((_, params, e)) => {
            model.theta_ema = params;
            e
        }
        None => 0,
    };
    Ok((
        model,
        TrainReport {
            history,
            best_epoch,
            scale,
            sigma_min,
            sigma_max,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::complex_normal_vec;

    fn tiny_arch() -> Arch {
        Arch {
            rows: 4,
            cols: 4,
            hidden: 6,
            kernel: 3,
            embed: 8,
        }
    }

    #[test]
    fn ema_cases() {
        let theta = [1.0, -2.0, 3.0];
        let mut e = [0.0, 0.0, 0.0];
        ema_update(&mut e, &theta, 0.0).unwrap();
        assert_eq!(e, theta);
        let mut fixed = theta;
        ema_update(&mut fixed, &theta, 0.9).unwrap();
        assert_eq!(fixed, theta);
        assert!(ema_update(&mut fixed, &theta, 1.0).is_err());
    }

    #[test]
    fn ema_contracts_geometrically() {
        let theta = [1.0, 2.0];
        let mut e = [5.0, -3.0];
        let m: f64 = 0.8;
        let d0: f64 = ((5.0f64 - 1.0).powi(2) + (-3.0f64 - 2.0).powi(2)).sqrt();
        for k in 1..=20 {
            ema_update(&mut e, &theta, m).unwrap();
            let d: f64 = ((e[0] - 1.0).powi(2) + (e[1] - 2.0).powi(2)).sqrt();
            assert!((d - m.powi(k) * d0).abs() < 1e-12);
        }
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(3, 0.01);
        let mut p = [0.0, 1.0, -1.0];
        adam.step(&mut p, &[2.0, -0.5, 0.0]);
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - 1.01).abs() < 1e-9);
        assert_eq!(p[2], -1.0);
    }

    #[test]
    fn untrained_loss_equals_injected_noise_energy() {
        let arch = tiny_arch();
        let model = DenoiserModel::new(arch, &mut seeded(1)).unwrap();
        let levels = training_levels(1000, 0.01, 2.0).unwrap();
        let mut state = TrainState {
            adam: Adam::new(model.param_count(), 1e-4),
            model,
            levels: levels.clone(),
        };
        let mut rng = seeded(2);
        let data: Vec<CVector> = (0..64)
            .map(|_| complex_normal_vec(&mut rng, 16, 1.0))
            .collect();
        let batch: Vec<&CVector> = data.iter().collect();
        let mean_sq: f64 = levels.iter().map(|s| s * s).sum::<f64>() / levels.len() as f64;
        let mut acc = 0.0;
        let reps = 30;
        for _ in 0..reps {
            // zero output layer ⇒ D = h_t regardless of the other weights
            state.model.theta = init_params_fresh(&arch);
            acc += train_step(&mut state, &batch, &mut rng).unwrap();
        }
        let got = acc / reps as f64;
        let want = mean_sq * 16.0;
        assert!((got / want - 1.0).abs() < 0.2, "loss {got} vs {want}");
    }

    fn init_params_fresh(arch: &Arch) -> Vec<f64> {
        super::super::network::init_params(arch, &mut seeded(3))
    }

    #[test]
    fn oracle_denoiser_has_zero_loss() {
        // batch_loss with zero noise and an identity network
        let arch = tiny_arch();
        let params = init_params_fresh(&arch);
        let mut rng = seeded(4);
        let h = complex_normal_vec(&mut rng, 16, 1.0);
        let n = complex_normal_vec(&mut rng, 16, 1.0);
        let l = batch_loss(&arch, &params, &[&h], &[&n], &[0.0]).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let mut rng = seeded(5);
        let data: Vec<CVector> = (0..8)
            .map(|_| complex_normal_vec(&mut rng, 16, 4.0))
            .collect();
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 4,
            ..Default::default()
        };
        let (model, report) = train(&data, &[], tiny_arch(), &cfg, &mut |_, _| Ok(())).unwrap();
        let fresh = DenoiserModel::new(tiny_arch(), &mut seeded(derive_seed(0, purpose::NET_INIT)))
            .unwrap();
        assert_eq!(model.theta, fresh.theta);
        assert_eq!(model.theta_ema, fresh.theta_ema);
        assert!(report.history.is_empty());
        assert!((model.scale - 2.0).abs() < 0.5);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let mut rng = seeded(6);
        // strongly structured data: a fixed pattern times a random gain
        let pattern = complex_normal_vec(&mut rng, 16, 1.0);
        let data: Vec<CVector> = (0..96)
            .map(|_| &pattern * complex_normal(&mut rng, 1.0))
            .collect();
        let (tr, te) = data.split_at(80);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-2,
            ema_rate: 0.5,
            sigma_max: Some(1.0),
            seed: 9,
            ..Default::default()
        };
        let mut seen = 0;
        let (a, ra) = train(tr, te, tiny_arch(), &cfg, &mut |_, _| {
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, 30);
        let (b, _) = train(tr, te, tiny_arch(), &cfg, &mut |_, _| Ok(())).unwrap();
        assert_eq!(a, b);
        let first = ra.history[0].test_loss;
        let best = ra.history[ra.best_epoch - 1].test_loss;
        assert!(best < 0.9 * first, "test loss {first} -> {best}");
    }

    #[test]
    fn rejects_small_dataset() {
        let data = alloc::vec![CVector::zeros(16); 3];
        let cfg = TrainConfig {
            batch_size: 4,
            ..Default::default()
        };
        assert!(train(&data, &[], tiny_arch(), &cfg, &mut |_, _| Ok(())).is_err());
    }
}
