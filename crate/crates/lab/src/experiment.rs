//! Monte-Carlo experiments: SNR, pilot-ratio and step-count sweeps, the
//! distribution-shift table and the `(λ, β)` grid search.
//!
//! Seeds follow `master → trial → purpose`: trial `t` uses
//! `derive_path(master, [TRIAL, t])`, and the pilot plan, noise, solver
//! initialization and (for Gaussian channels) the channel itself are drawn
//! from children of that seed. The plan depends only on the trial, so every
//! SNR and every method in a trial sees the same `Φ`; the noise depends on
//! the trial and the SNR.

use std::time::Instant;

use diffpace_core::baselines::{
    amp, ls_estimate, ls_with_factor, mmse_colored, omp, AmpConfig, OmpStop, SecondOrderPrior,
};
use diffpace_core::diffusion::{make_schedule, DenoiserModel, GaussianPrior, NoiseSchedule};
use diffpace_core::geometry::{ArrayConfig, Codebook};
use diffpace_core::measurement::{
    build_measurement_matrix, measure, nmse, noise_variance_for_snr, pilot_dims_for_ratio,
    sample_pilot_plan, MeasurementSet,
};
use diffpace_core::rng::{derive_path, derive_seed, purpose, seeded};
use diffpace_core::solver::{
    diffpace_estimate_with, ConsistencyOperator, SolverConfig, StepRecord,
};
use diffpace_core::{CMatrix, CVector, C64};
use rayon::prelude::*;

use crate::config::{ChannelSource, ExperimentConfig, Method, Preset};
use crate::dataset::Dataset;
use crate::error::{LabError, Result};
use crate::results::{mean_nmse_db, GridBestRow, GridRow, ResultRow, ShiftRow, StepRow};

/// Seed label of the grid-search trials, kept apart from evaluation trials.
pub const VALIDATION: u64 = 0x0c;

/// Diagonal loading of the sample covariance, relative to its mean
/// diagonal.
const COVARIANCE_LOADING: f64 = 1e-6;

/// `(λ, β)` of the plug-and-play solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weights {
    pub lambda: f64,
    pub beta: f64,
}

/// Everything the estimators need besides the measurement.
pub struct Context {
    pub array: ArrayConfig,
    pub rx: Codebook,
    pub tx: Codebook,
    pub train: Vec<CVector>,
    pub test: Vec<CVector>,
    /// Mean `‖h‖²` of the training split; the SNR reference.
    pub energy: f64,
    pub moments: SecondOrderPrior,
    pub oracle: GaussianPrior,
    /// Noise range of the oracle schedule, data units.
    pub oracle_sigma: (f64, f64),
    pub model: Option<DenoiserModel>,
    pub n_b: u32,
    pub base_alpha: f64,
    pub pilot_override: Option<(usize, usize)>,
    pub omp_max_atoms: Option<usize>,
    pub master_seed: u64,
    pub channels: ChannelSource,
    pub timing: bool,
    pub weights: Weights,
}

/// One trial's observation, shared by all methods.
pub struct Instance {
    pub h: CVector,
    pub meas: MeasurementSet,
    /// Covariance of the combined noise.
    pub noise_cov: CMatrix,
    pub op: ConsistencyOperator,
    pub seed: u64,
}

/// Which channels a run is evaluated on.
#[derive(Clone, Copy)]
pub enum Channels<'a> {
    /// The configured source (held-out split or Gaussian draws).
    Configured,
    /// An explicit list, used by the shift evaluation.
    List(&'a [CVector]),
}

impl Context {
    pub fn new(
        cfg: &ExperimentConfig,
        dataset: &Dataset,
        model: Option<DenoiserModel>,
    ) -> Result<Self> {
        let array = cfg.array_config();
        if dataset.header.rows != array.n_r || dataset.header.cols != array.n_t {
            return Err(LabError::Config(format!(
                "dataset is {}x{}, the array configuration needs {}x{}",
                dataset.header.rows, dataset.header.cols, array.n_r, array.n_t
            )));
        }
        if let Some(m) = &model {
            if m.arch.rows != array.n_r || m.arch.cols != array.n_t {
                return Err(LabError::Config(
                    "checkpoint grid does not match the array".into(),
                ));
            }
        }
        let (rx, tx) = array.codebooks()?;
        let (train, test) = dataset.split(cfg.dataset.train_fraction);
        let moments = SecondOrderPrior::from_samples(&train, COVARIANCE_LOADING)?;
        let oracle = GaussianPrior::new(moments.mean.clone(), &moments.covariance)?;
        let dim = dataset.dim() as f64;
        let energy = train.iter().map(|h| h.norm_squared()).sum::<f64>() / train.len() as f64;
        let rms = (energy / dim).sqrt();
        let max_rms = train
            .iter()
            .map(|h| (h.norm_squared() / dim).sqrt())
            .fold(0.0, f64::max);
        let (lambda, beta) = cfg.solver.lambda_beta(cfg.array.preset);
        Ok(Self {
            array,
            rx,
            tx,
            train,
            test,
            energy,
            moments,
            oracle,
            oracle_sigma: (0.01 * rms, 2.0 * max_rms),
            model,
            n_b: cfg.pilots.n_b,
            base_alpha: cfg.pilots.alpha,
            pilot_override: cfg.pilots.m_t.zip(cfg.pilots.m_r),
            omp_max_atoms: cfg.solver.omp_max_atoms,
            master_seed: cfg.seed,
            channels: cfg.experiment.channels,
            timing: cfg.experiment.timing,
            weights: Weights { lambda, beta },
        })
    }

    pub fn preset_weights(preset: Preset) -> Weights {
        let (lambda, beta) = crate::config::SolverSection::default().lambda_beta(preset);
        Weights { lambda, beta }
    }

    pub fn trial_seed(&self, branch: u64, trial: usize) -> u64 {
        derive_path(self.master_seed, &[branch, trial as u64])
    }

    pub fn pilot_dims(&self, alpha: f64) -> Result<(usize, usize)> {
        match self.pilot_override {
            Some(d) if alpha == self.base_alpha => Ok(d),
            _ => Ok(pilot_dims_for_ratio(&self.array, alpha)?),
        }
    }

    fn channel(&self, channels: Channels<'_>, trial: usize, seed: u64) -> CVector {
        match channels {
            Channels::List(list) => list[trial % list.len()].clone(),
            Channels::Configured => match self.channels {
                ChannelSource::Dataset => self.test[trial % self.test.len()].clone(),
                ChannelSource::Gaussian => self
                    .oracle
                    .sample(&mut seeded(derive_seed(seed, purpose::PRIOR))),
            },
        }
    }

    /// Builds the observation of trial `trial` at `(alpha, snr_db)`.
    pub fn instance(
        &self,
        channels: Channels<'_>,
        branch: u64,
        trial: usize,
        alpha: f64,
        snr_db: f64,
    ) -> Result<Instance> {
        let seed = self.trial_seed(branch, trial);
        let h = self.channel(channels, trial, seed);
        let (m_t, m_r) = self.pilot_dims(alpha)?;
        let plan = sample_pilot_plan(
            &mut seeded(derive_seed(seed, purpose::PILOT)),
            &self.array,
            m_t,
            m_r,
            self.n_b,
        )?;
        let phi = build_measurement_matrix(&plan, &self.rx, &self.tx)?;
        let var = noise_variance_for_snr(
            snr_db,
            self.energy,
            self.array.n_t,
            self.array.n_r,
            plan.power,
        )?;
        let sigma_n = var.sqrt();
        let mut noise_rng = seeded(derive_path(seed, &[purpose::NOISE, snr_db.to_bits()]));
        let meas = measure(&h, &plan, &phi, sigma_n, snr_db, &mut noise_rng)?;
        let noise_cov = plan.noise_structure() * C64::new(var, 0.0);
        let op = ConsistencyOperator::new(&phi)?;
        if op.loaded() {
            log::warn!("trial {trial}: ΦΦᴴ is ill-conditioned, using diagonal loading");
        }
        Ok(Instance {
            h,
            meas,
            noise_cov,
            op,
            seed,
        })
    }

    fn schedule(&self, method: Method, k: usize) -> Result<NoiseSchedule> {
        let (lo, hi) = match method {
            Method::Diffpace => {
                let m = self
                    .model
                    .as_ref()
                    .ok_or_else(|| LabError::Invalid("diffpace needs a checkpoint".into()))?;
                (m.sigma_min * m.scale, m.sigma_max * m.scale)
            }
            _ => self.oracle_sigma,
        };
        Ok(make_schedule(k, lo, hi)?)
    }

    /// Runs `method` on `inst`; `k` and `weights` only matter for the
    /// diffusion methods.
    pub fn estimate(
        &self,
        method: Method,
        inst: &Instance,
        k: usize,
        weights: Weights,
    ) -> Result<(CVector, Vec<StepRecord>)> {
        let y = &inst.meas.y;
        let phi = &inst.meas.phi;
        let est = match method {
            Method::Ls => {
                if inst.op.loaded() {
                    ls_estimate(y, phi)?
                } else {
                    ls_with_factor(y, inst.op.gram())
                }
            }
            Method::Omp => {
                let atoms = self
                    .omp_max_atoms
                    .unwrap_or(phi.nrows() / 4)
                    .clamp(1, phi.ncols());
                let tol = inst.noise_cov.trace().re.max(0.0).sqrt();
                omp(
                    y,
                    phi,
                    OmpStop {
                        max_atoms: atoms,
                        residual_tol: tol,
                    },
                )?
                .estimate
            }
            Method::Amp => amp(y, phi, AmpConfig::default())?.estimate,
            Method::Mmse => mmse_colored(y, phi, &self.moments, &inst.noise_cov)?.estimate,
            Method::Diffpace | Method::DiffpaceOracle => {
                let cfg = SolverConfig::new(
                    self.schedule(method, k)?,
                    weights.lambda,
                    weights.beta,
                    derive_seed(inst.seed, purpose::SOLVER_INIT),
                )?;
                let out = if method == Method::Diffpace {
                    let model = self.model.as_ref().expect("checked in schedule");
                    diffpace_estimate_with(model, &inst.op, y, inst.meas.sigma_n, &cfg)?
                } else {
                    diffpace_estimate_with(&self.oracle, &inst.op, y, inst.meas.sigma_n, &cfg)?
                };
                return Ok((out.estimate, out.steps));
            }
        };
        Ok((est, Vec::new()))
    }

    fn check_methods(&self, methods: &[Method]) -> Result<()> {
        if methods.iter().any(|m| m.needs_checkpoint()) && self.model.is_none() {
            return Err(LabError::Invalid(
                "method diffpace needs a trained checkpoint".into(),
            ));
        }
        Ok(())
    }

    /// Evaluates every method on every `(alpha, snr, trial)` cell. Diffusion
    /// methods run once per `K` in `ks` on the same observation; the other
    /// methods report `K = 0`.
    #[allow(clippy::too_many_arguments)]
    pub fn run(
        &self,
        channels: Channels<'_>,
        alphas: &[f64],
        snrs: &[f64],
        ks: &[usize],
        methods: &[Method],
        trials: usize,
        weights: Weights,
        record_steps: bool,
    ) -> Result<(Vec<ResultRow>, Vec<StepRow>)> {
        self.check_methods(methods)?;
        let jobs: Vec<(usize, usize, usize)> = (0..alphas.len())
            .flat_map(|a| (0..snrs.len()).flat_map(move |s| (0..trials).map(move |t| (a, s, t))))
            .collect();
        type Keyed = ((usize, usize, usize, usize, usize), ResultRow, Vec<StepRow>);
        let per_job: Vec<Vec<Keyed>> = jobs
            .par_iter()
            .map(|&(ai, si, trial)| -> Result<Vec<Keyed>> {
                let (alpha, snr) = (alphas[ai], snrs[si]);
                let inst = self.instance(channels, purpose::TRIAL, trial, alpha, snr)?;
                let mut out = Vec::new();
                for (mi, &method) in methods.iter().enumerate() {
                    let k_list: Vec<(usize, usize)> = if method.is_diffusion() {
                        ks.iter().copied().enumerate().collect()
                    } else {
                        vec![(0, 0)]
                    };
                    for (ki, k) in k_list {
                        let start = Instant::now();
                        let (est, steps) = self.estimate(method, &inst, k, weights)?;
                        let wall_ms = if self.timing {
                            start.elapsed().as_secs_f64() * 1e3
                        } else {
                            0.0
                        };
                        let nmse_db = nmse(inst.h.as_slice(), est.as_slice())?;
                        if !nmse_db.is_finite() {
                            return Err(LabError::Numerical(format!(
                                "{method} produced a non-finite estimate in trial {trial}"
                            )));
                        }
                        let step_rows = if record_steps {
                            steps
                                .iter()
                                .map(|s| StepRow {
                                    method: method.name().into(),
                                    snr_db: snr,
                                    trial,
                                    i: s.i,
                                    sigma: s.sigma,
                                    rho: s.rho,
                                    residual: s.residual,
                                    step_norm: s.step_norm,
                                })
                                .collect()
                        } else {
                            Vec::new()
                        };
                        out.push((
                            (ai, si, mi, ki, trial),
                            ResultRow {
                                method: method.name().into(),
                                snr_db: snr,
                                alpha,
                                k,
                                trial,
                                nmse_db,
                                wall_ms,
                                seed: inst.seed,
                            },
                            step_rows,
                        ));
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        let mut all: Vec<Keyed> = per_job.into_iter().flatten().collect();
        all.sort_by_key(|(key, _, _)| *key);
        let mut rows = Vec::with_capacity(all.len());
        let mut steps = Vec::new();
        for (_, r, s) in all {
            rows.push(r);
            steps.extend(s);
        }
        Ok((rows, steps))
    }

    /// Exhaustive `(λ, β)` search on validation trials. Returns the full
    /// surface and the best pair per SNR; ties go to the smaller `λ`, then
    /// the smaller `β`.
    #[allow(clippy::too_many_arguments)]
    pub fn gridsearch(
        &self,
        method: Method,
        lambdas: &[f64],
        betas: &[f64],
        snrs: &[f64],
        alpha: f64,
        k: usize,
        trials: usize,
    ) -> Result<(Vec<GridRow>, Vec<GridBestRow>)> {
        if lambdas.is_empty() || betas.is_empty() {
            return Err(LabError::Invalid(
                "grid search needs non-empty lambda and beta grids".into(),
            ));
        }
        if snrs.is_empty() || trials == 0 {
            return Err(LabError::Invalid(
                "grid search needs at least one SNR and one trial".into(),
            ));
        }
        if !method.is_diffusion() {
            return Err(LabError::Invalid(format!("cannot grid-search {method}")));
        }
        self.check_methods(&[method])?;
        let mut ls = lambdas.to_vec();
        let mut bs = betas.to_vec();
        ls.sort_by(f64::total_cmp);
        ls.dedup();
        bs.sort_by(f64::total_cmp);
        bs.dedup();
        let pairs: Vec<Weights> = ls
            .iter()
            .flat_map(|&lambda| bs.iter().map(move |&beta| Weights { lambda, beta }))
            .collect();
        let mut surface = Vec::new();
        let mut best = Vec::new();
        for &snr in snrs {
            let jobs: Vec<usize> = (0..trials).collect();
            // nmse[trial][pair], in dB
            let per_trial: Vec<Vec<f64>> = jobs
                .par_iter()
                .map(|&trial| -> Result<Vec<f64>> {
                    let inst =
                        self.instance(Channels::Configured, VALIDATION, trial, alpha, snr)?;
                    pairs
                        .iter()
                        .map(|&w| {
                            let (est, _) = self.estimate(method, &inst, k, w)?;
                            Ok(nmse(inst.h.as_slice(), est.as_slice())?)
                        })
                        .collect()
                })
                .collect::<Result<_>>()?;
            let mut winner: Option<(Weights, f64)> = None;
            for (pi, &w) in pairs.iter().enumerate() {
                let vals: Vec<f64> = per_trial.iter().map(|v| v[pi]).collect();
                let mean = mean_nmse_db(&vals);
                surface.push(GridRow {
                    lambda: w.lambda,
                    beta: w.beta,
                    snr_db: snr,
                    trials,
                    mean_nmse_db: mean,
                });
                let better = match winner {
                    None => true,
                    Some((_, m)) => mean < m || (m.is_nan() && !mean.is_nan()),
                };
                if better {
                    winner = Some((w, mean));
                }
            }
            let (w, m) = winner.expect("non-empty grid");
            best.push(GridBestRow {
                snr_db: snr,
                lambda: w.lambda,
                beta: w.beta,
                mean_nmse_db: m,
            });
        }
        Ok((surface, best))
    }

    /// In-distribution versus shifted-scenario NMSE per method and SNR.
    #[allow(clippy::too_many_arguments)]
    pub fn shift_eval(
        &self,
        shifted: &[CVector],
        snrs: &[f64],
        methods: &[Method],
        alpha: f64,
        k: usize,
        trials: usize,
        weights: Weights,
    ) -> Result<Vec<ShiftRow>> {
        if shifted.is_empty() {
            return Err(LabError::Invalid("shifted set is empty".into()));
        }
        let base_set: Vec<CVector>;
        let base = match self.channels {
            ChannelSource::Dataset => Channels::List(&self.test),
            ChannelSource::Gaussian => {
                base_set = (0..trials)
                    .map(|t| {
                        self.oracle.sample(&mut seeded(derive_seed(
                            self.trial_seed(purpose::TRIAL, t),
                            purpose::PRIOR,
                        )))
                    })
                    .collect();
                Channels::List(&base_set)
            }
        };
        let (b_rows, _) = self.run(base, &[alpha], snrs, &[k], methods, trials, weights, false)?;
        let (s_rows, _) = self.run(
            Channels::List(shifted),
            &[alpha],
            snrs,
            &[k],
            methods,
            trials,
            weights,
            false,
        )?;
        let b_sum = crate::results::summarize(&b_rows);
        let s_sum = crate::results::summarize(&s_rows);
        let mut out = Vec::with_capacity(2 * b_sum.len());
        for (b, s) in b_sum.iter().zip(&s_sum) {
            out.push(ShiftRow {
                set: "base".into(),
                method: b.method.clone(),
                snr_db: b.snr_db,
                trials: b.trials,
                mean_nmse_db: b.mean_nmse_db,
                delta_db: 0.0,
            });
            out.push(ShiftRow {
                set: "shifted".into(),
                method: s.method.clone(),
                snr_db: s.snr_db,
                trials: s.trials,
                mean_nmse_db: s.mean_nmse_db,
                delta_db: s.mean_nmse_db - b.mean_nmse_db,
            });
        }
        Ok(out)
    }
}
