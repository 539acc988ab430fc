//! Subcommand bodies. Each command writes into its own directory under
//! `out_dir` and finishes with a `manifest.toml` listing its outputs.

use std::path::{Path, PathBuf};

use diffpace_core::diffusion::{self, DenoiserModel};
use diffpace_core::rng::{derive_seed, purpose};

use crate::checkpoint;
use crate::config::{ExperimentConfig, Method};
use crate::dataset::Dataset;
use crate::error::{LabError, Result};
use crate::experiment::{Channels, Context};
use crate::manifest::Manifest;
use crate::results::{summarize, write_csv, HistoryRow, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Snr,
    Alpha,
    Steps,
    Shift,
}

impl SweepKind {
    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Snr => "snr",
            SweepKind::Alpha => "alpha",
            SweepKind::Steps => "steps",
            SweepKind::Shift => "shift",
        }
    }
}

pub struct Session {
    pub cfg: ExperimentConfig,
    pub force: bool,
    /// Record per-step solver diagnostics.
    pub diagnostics: bool,
}

fn refuse_existing(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(LabError::Exists(path.to_path_buf()));
    }
    Ok(())
}

/// Writes a table and remembers the path for the manifest.
fn emit<T: Table>(files: &mut Vec<PathBuf>, path: PathBuf, rows: &[T]) -> Result<()> {
    write_csv(&path, rows)?;
    log::info!("wrote {} ({} rows)", path.display(), rows.len());
    files.push(path);
    Ok(())
}

impl Session {
    pub fn new(cfg: ExperimentConfig) -> Self {
        Self {
            cfg,
            force: false,
            diagnostics: false,
        }
    }

    fn run_dir(&self, name: &str) -> Result<PathBuf> {
        let dir = self.cfg.out_dir.join(name);
        refuse_existing(&dir.join(crate::manifest::FILE_NAME), self.force)?;
        std::fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
        Ok(dir)
    }

    fn finish(&self, command: &str, dir: &Path, files: &[PathBuf]) -> Result<PathBuf> {
        let mut m = Manifest::new(command, &self.cfg.to_toml(), self.cfg.seed);
        m.record(dir, files)?;
        m.write(dir)
    }

    /// Loads the dataset and checks it was generated for this array and
    /// scenario.
    pub fn load_dataset(&self) -> Result<Dataset> {
        let path = self.cfg.dataset_path();
        let ds = Dataset::load(&path)?;
        if ds.header.array != self.cfg.array || ds.header.scenario != self.cfg.scenario {
            return Err(LabError::Config(format!(
                "{} was generated for a different array or scenario; regenerate it",
                path.display()
            )));
        }
        Ok(ds)
    }

    pub fn load_model(&self) -> Result<DenoiserModel> {
        let arch = self.cfg.train.arch(&self.cfg.array_config())?;
        checkpoint::load(&self.cfg.checkpoint_path(), Some(arch))
    }

    fn context(&self, methods: &[Method]) -> Result<Context> {
        let ds = self.load_dataset()?;
        let model = if methods.iter().any(|m| m.needs_checkpoint()) {
            Some(self.load_model()?)
        } else {
            None
        };
        Context::new(&self.cfg, &ds, model)
    }

    pub fn gen_dataset(&self) -> Result<PathBuf> {
        let path = self.cfg.dataset_path();
        refuse_existing(&path, self.force)?;
        let ds = Dataset::generate(
            &self.cfg.array,
            &self.cfg.scenario,
            self.cfg.dataset.samples,
            self.cfg.seed,
        )?;
        ds.save(&path)?;
        log::info!("wrote {} samples to {}", ds.samples.len(), path.display());
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut m = Manifest::new("gen-dataset", &self.cfg.to_toml(), self.cfg.seed);
        m.record(&dir, std::slice::from_ref(&path))?;
        let manifest = dir.join("dataset.manifest.toml");
        std::fs::write(&manifest, toml::to_string(&m).expect("manifest serializes"))
            .map_err(|e| LabError::io(&manifest, e))?;
        Ok(path)
    }

    pub fn train(&self) -> Result<PathBuf> {
        let path = self.cfg.checkpoint_path();
        refuse_existing(&path, self.force)?;
        let ds = self.load_dataset()?;
        let (train, test) = ds.split(self.cfg.dataset.train_fraction);
        let arch = self.cfg.train.arch(&self.cfg.array_config())?;
        let tc = self
            .cfg
            .train
            .train_config(derive_seed(self.cfg.seed, purpose::TRAIN))?;
        let mut history = Vec::new();
        let (model, report) = diffusion::train(&train, &test, arch, &tc, &mut |_, s| {
            log::info!(
                "epoch {} train {:.5} test {:.5}",
                s.epoch,
                s.train_loss,
                s.test_loss
            );
            history.push(HistoryRow {
                epoch: s.epoch,
                train_loss: s.train_loss,
                test_loss: s.test_loss,
            });
            Ok(())
        })?;
        log::info!("kept EMA parameters of epoch {}", report.best_epoch);
        checkpoint::save(&model, &path)?;
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let hist = path.with_extension("history.csv");
        write_csv(&hist, &history)?;
        let mut m = Manifest::new("train", &self.cfg.to_toml(), self.cfg.seed);
        m.record(&dir, &[path.clone(), hist])?;
        let manifest = path.with_extension("manifest.toml");
        std::fs::write(&manifest, toml::to_string(&m).expect("manifest serializes"))
            .map_err(|e| LabError::io(&manifest, e))?;
        Ok(path)
    }

    /// Trained-model estimates at the configured SNRs.
    pub fn estimate(&self) -> Result<PathBuf> {
        self.evaluate("estimate", &[Method::Diffpace])
    }

    /// All configured methods at the configured SNRs.
    pub fn benchmark(&self) -> Result<PathBuf> {
        self.evaluate("benchmark", &self.cfg.experiment.methods.clone())
    }

    fn evaluate(&self, name: &str, methods: &[Method]) -> Result<PathBuf> {
        let dir = self.run_dir(name)?;
        let ctx = self.context(methods)?;
        let run = &self.cfg.experiment;
        let (rows, steps) = ctx.run(
            Channels::Configured,
            &[self.cfg.pilots.alpha],
            &run.snr_db,
            &[self.cfg.solver.steps],
            methods,
            run.trials,
            ctx.weights,
            self.diagnostics,
        )?;
        let mut files = Vec::new();
        emit(&mut files, dir.join("results.csv"), &rows)?;
        emit(&mut files, dir.join("summary.csv"), &summarize(&rows))?;
        if self.diagnostics {
            emit(&mut files, dir.join("steps.csv"), &steps)?;
        }
        self.finish(name, &dir, &files)
    }

    pub fn sweep(&self, kind: SweepKind) -> Result<PathBuf> {
        let name = format!("sweep-{}", kind.name());
        let run = &self.cfg.experiment;
        let methods: Vec<Method> = match kind {
            SweepKind::Steps => run
                .methods
                .iter()
                .copied()
                .filter(|m| m.is_diffusion())
                .collect(),
            _ => run.methods.clone(),
        };
        if methods.is_empty() {
            return Err(LabError::Invalid(
                "the step sweep needs a diffusion method in experiment.methods".into(),
            ));
        }
        let (alphas, ks) = match kind {
            SweepKind::Alpha if run.alpha_grid.is_empty() => {
                return Err(LabError::Invalid("experiment.alpha_grid is empty".into()))
            }
            SweepKind::Steps if run.steps_grid.is_empty() => {
                return Err(LabError::Invalid("experiment.steps_grid is empty".into()))
            }
            SweepKind::Alpha => (run.alpha_grid.clone(), vec![self.cfg.solver.steps]),
            SweepKind::Steps => (vec![self.cfg.pilots.alpha], run.steps_grid.clone()),
            _ => (vec![self.cfg.pilots.alpha], vec![self.cfg.solver.steps]),
        };
        let dir = self.run_dir(&name)?;
        let ctx = self.context(&methods)?;
        let mut files = Vec::new();
        if kind == SweepKind::Shift {
            let shifted_scenario = self.cfg.shift.apply(&self.cfg.scenario);
            let count = self.cfg.shift.samples.unwrap_or(ctx.test.len());
            let shifted = Dataset::generate(
                &self.cfg.array,
                &shifted_scenario,
                count,
                derive_seed(self.cfg.seed, purpose::SHIFT),
            )?;
            let rows = ctx.shift_eval(
                &shifted.samples,
                &run.snr_db,
                &methods,
                self.cfg.pilots.alpha,
                self.cfg.solver.steps,
                run.trials,
                ctx.weights,
            )?;
            emit(&mut files, dir.join("shift.csv"), &rows)?;
        } else {
            let (rows, steps) = ctx.run(
                Channels::Configured,
                &alphas,
                &run.snr_db,
                &ks,
                &methods,
                run.trials,
                ctx.weights,
                self.diagnostics,
            )?;
            emit(&mut files, dir.join("results.csv"), &rows)?;
            emit(&mut files, dir.join("summary.csv"), &summarize(&rows))?;
            if self.diagnostics {
                emit(&mut files, dir.join("steps.csv"), &steps)?;
            }
        }
        self.finish(&name, &dir, &files)
    }

    pub fn gridsearch(&self) -> Result<PathBuf> {
        let g = &self.cfg.gridsearch;
        let dir = self.run_dir("gridsearch")?;
        let ctx = self.context(&[g.method])?;
        let (surface, best) = ctx.gridsearch(
            g.method,
            &g.lambda,
            &g.beta,
            &self.cfg.experiment.snr_db,
            self.cfg.pilots.alpha,
            self.cfg.solver.steps,
            g.trials,
        )?;
        for b in &best {
            log::info!(
                "SNR {} dB: lambda {} beta {} ({:.2} dB)",
                b.snr_db,
                b.lambda,
                b.beta,
                b.mean_nmse_db
            );
        }
        let mut files = Vec::new();
        emit(&mut files, dir.join("grid.csv"), &surface)?;
        emit(&mut files, dir.join("best.csv"), &best)?;
        self.finish("gridsearch", &dir, &files)
    }
}
