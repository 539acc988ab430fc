//! Experiment configuration, read from TOML. Unknown keys are rejected so a
//! typo cannot silently fall back to a default.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use diffpace_core::channel::ScenarioSpec;
use diffpace_core::diffusion::{Arch, TrainConfig};
use diffpace_core::geometry::{ArrayConfig, SubarrayShape};
use diffpace_core::solver;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream of a run derives from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub array: ArraySection,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub pilots: PilotSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub experiment: RunSection,
    #[serde(default)]
    pub gridsearch: GridSection,
    #[serde(default)]
    pub shift: ShiftSection,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Desk,
    MmwaveLike,
    ThzLike,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub preset: Preset,
    /// Only read for `preset = "custom"`.
    pub n_t: Option<usize>,
    pub n_r: Option<usize>,
    pub k_t: Option<usize>,
    pub k_r: Option<usize>,
    pub l_t: Option<usize>,
    pub l_r: Option<usize>,
    /// `[n_x, n_z]` of one transmit subarray.
    pub tx_subarray: Option<[usize; 2]>,
    pub rx_subarray: Option<[usize; 2]>,
}

impl Default for ArraySection {
    fn default() -> Self {
        Self {
            preset: Preset::Desk,
            n_t: None,
            n_r: None,
            k_t: None,
            k_r: None,
            l_t: None,
            l_r: None,
            tx_subarray: None,
            rx_subarray: None,
        }
    }
}

impl ArraySection {
    pub fn array_config(&self) -> Result<ArrayConfig> {
        let custom = [
            self.n_t.is_some(),
            self.n_r.is_some(),
            self.k_t.is_some(),
            self.k_r.is_some(),
            self.l_t.is_some(),
            self.l_r.is_some(),
            self.tx_subarray.is_some(),
            self.rx_subarray.is_some(),
        ];
        let preset = match self.preset {
            Preset::Desk => Some(ArrayConfig::desk()),
            Preset::MmwaveLike => Some(ArrayConfig::mmwave()),
            Preset::ThzLike => Some(ArrayConfig::thz()),
            Preset::Custom => None,
        };
        if let Some(cfg) = preset {
            if custom.iter().any(|&c| c) {
                return Err(LabError::Config(
                    "array: dimension keys are only allowed with preset = \"custom\"".into(),
                ));
            }
            return Ok(cfg);
        }
        let need = |v: Option<usize>, key: &str| {
            v.ok_or_else(|| {
                LabError::Config(format!("array.{key} is required for a custom preset"))
            })
        };
        let shape = |v: Option<[usize; 2]>, key: &str| {
            v.map(|[x, z]| SubarrayShape::new(x, z)).ok_or_else(|| {
                LabError::Config(format!("array.{key} is required for a custom preset"))
            })
        };
        ArrayConfig::new(
            need(self.n_t, "n_t")?,
            need(self.n_r, "n_r")?,
            need(self.k_t, "k_t")?,
            need(self.k_r, "k_r")?,
            need(self.l_t, "l_t")?,
            need(self.l_r, "l_r")?,
            shape(self.tx_subarray, "tx_subarray")?,
            shape(self.rx_subarray, "rx_subarray")?,
        )
        .map_err(|e| LabError::Config(format!("array: {e}")))
    }
}

/// Scenario statistics; angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub paths: [usize; 2],
    pub azimuth_deg: [f64; 2],
    pub elevation_deg: [f64; 2],
    pub power_decay_db: f64,
    pub fading_shape: f64,
    pub angular_spread_deg: f64,
    pub subarray_spacing_wavelengths: f64,
    pub wavelength_m: f64,
    pub reflector_distance_m: [f64; 2],
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self::from_spec(&ScenarioSpec::default())
    }
}

impl ScenarioSection {
    pub fn from_spec(s: &ScenarioSpec) -> Self {
        Self {
            paths: [s.min_paths, s.max_paths],
            azimuth_deg: [
                s.azimuth_range.0.to_degrees(),
                s.azimuth_range.1.to_degrees(),
            ],
            elevation_deg: [
                s.elevation_range.0.to_degrees(),
                s.elevation_range.1.to_degrees(),
            ],
            power_decay_db: s.power_decay_db,
            fading_shape: s.fading_shape,
            angular_spread_deg: s.angular_spread.to_degrees(),
            subarray_spacing_wavelengths: s.subarray_spacing_wavelengths,
            wavelength_m: s.wavelength_m,
            reflector_distance_m: s.reflector_distance_m.into(),
        }
    }

    pub fn spec(&self) -> Result<ScenarioSpec> {
        let spec = ScenarioSpec {
            min_paths: self.paths[0],
            max_paths: self.paths[1],
            azimuth_range: (
                self.azimuth_deg[0].to_radians(),
                self.azimuth_deg[1].to_radians(),
            ),
            elevation_range: (
                self.elevation_deg[0].to_radians(),
                self.elevation_deg[1].to_radians(),
            ),
            power_decay_db: self.power_decay_db,
            fading_shape: self.fading_shape,
            angular_spread: self.angular_spread_deg.to_radians(),
            subarray_spacing_wavelengths: self.subarray_spacing_wavelengths,
            wavelength_m: self.wavelength_m,
            reflector_distance_m: (self.reflector_distance_m[0], self.reflector_distance_m[1]),
        };
        spec.validate()
            .map_err(|e| LabError::Config(format!("scenario: {e}")))?;
        Ok(spec)
    }
}

/// Scenario overrides for the distribution-shift evaluation. Unset keys
/// keep the base value, so an empty section is the identity shift.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftSection {
    pub paths: Option<[usize; 2]>,
    pub azimuth_deg: Option<[f64; 2]>,
    pub elevation_deg: Option<[f64; 2]>,
    pub power_decay_db: Option<f64>,
    pub fading_shape: Option<f64>,
    pub angular_spread_deg: Option<f64>,
    pub reflector_distance_m: Option<[f64; 2]>,
    /// Channels drawn from the shifted scenario.
    pub samples: Option<usize>,
}

impl ShiftSection {
    pub fn apply(&self, base: &ScenarioSection) -> ScenarioSection {
        let mut s = base.clone();
        if let Some(v) = self.paths {
            s.paths = v;
        }
        if let Some(v) = self.azimuth_deg {
            s.azimuth_deg = v;
        }
        if let Some(v) = self.elevation_deg {
            s.elevation_deg = v;
        }
        if let Some(v) = self.power_decay_db {
            s.power_decay_db = v;
        }
        if let Some(v) = self.fading_shape {
            s.fading_shape = v;
        }
        if let Some(v) = self.angular_spread_deg {
            s.angular_spread_deg = v;
        }
        if let Some(v) = self.reflector_distance_m {
            s.reflector_distance_m = v;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    pub samples: usize,
    /// Dataset file; relative paths resolve against the output directory.
    pub path: PathBuf,
    pub train_fraction: f64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            samples: 2048,
            path: PathBuf::from("dataset.bin"),
            train_fraction: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PilotSection {
    /// Pilot ratio; the slot counts are derived from it unless both
    /// `m_t` and `m_r` are given.
    pub alpha: f64,
    pub m_t: Option<usize>,
    pub m_r: Option<usize>,
    pub n_b: u32,
}

impl Default for PilotSection {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            m_t: None,
            m_r: None,
            n_b: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub ema_rate: f64,
    pub levels: usize,
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    pub hidden: usize,
    pub kernel: usize,
    pub embed: usize,
    /// Checkpoint file; relative paths resolve against the output directory.
    pub checkpoint: PathBuf,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let a = Arch::new(1, 1);
        Self {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            ema_rate: t.ema_rate,
            levels: t.levels,
            sigma_min: t.sigma_min,
            sigma_max: t.sigma_max,
            hidden: a.hidden,
            kernel: a.kernel,
            embed: a.embed,
            checkpoint: PathBuf::from("checkpoint.bin"),
        }
    }
}

impl TrainSection {
    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            ema_rate: self.ema_rate,
            levels: self.levels,
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            seed,
        };
        cfg.validate()
            .map_err(|e| LabError::Config(format!("train: {e}")))?;
        Ok(cfg)
    }

    pub fn arch(&self, array: &ArrayConfig) -> Result<Arch> {
        let arch = Arch {
            rows: array.n_r,
            cols: array.n_t,
            hidden: self.hidden,
            kernel: self.kernel,
            embed: self.embed,
        };
        arch.validate()
            .map_err(|e| LabError::Config(format!("train: {e}")))?;
        Ok(arch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// Inference steps `K`.
    pub steps: usize,
    /// Prior weight; defaults to the band value of the preset.
    pub lambda: Option<f64>,
    /// Smoothing weight; defaults to the band value of the preset.
    pub beta: Option<f64>,
    /// OMP atom budget; defaults to a quarter of the measurement rows.
    pub omp_max_atoms: Option<usize>,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            steps: 100,
            lambda: None,
            beta: None,
            omp_max_atoms: None,
        }
    }
}

impl SolverSection {
    pub fn lambda_beta(&self, preset: Preset) -> (f64, f64) {
        let (l, b) = match preset {
            Preset::ThzLike => (solver::THZ_LAMBDA, solver::THZ_BETA),
            _ => (solver::MMWAVE_LAMBDA, solver::MMWAVE_BETA),
        };
        (self.lambda.unwrap_or(l), self.beta.unwrap_or(b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Ls,
    Omp,
    Amp,
    Mmse,
    Diffpace,
    DiffpaceOracle,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Ls,
        Method::Omp,
        Method::Amp,
        Method::Mmse,
        Method::Diffpace,
        Method::DiffpaceOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ls => "ls",
            Method::Omp => "omp",
            Method::Amp => "amp",
            Method::Mmse => "mmse",
            Method::Diffpace => "diffpace",
            Method::DiffpaceOracle => "diffpace-oracle",
        }
    }

    /// Whether the method runs the iterative solver (and so depends on `K`).
    pub fn is_diffusion(self) -> bool {
        matches!(self, Method::Diffpace | Method::DiffpaceOracle)
    }

    pub fn needs_checkpoint(self) -> bool {
        self == Method::Diffpace
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| LabError::Invalid(format!("unknown method {s:?}")))
    }
}

/// Where evaluation channels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelSource {
    /// The held-out split of the dataset.
    Dataset,
    /// Draws from `CN(μ, Σ)` with the training split's first two moments.
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub snr_db: Vec<f64>,
    pub methods: Vec<Method>,
    pub trials: usize,
    pub channels: ChannelSource,
    /// Pilot ratios for the α sweep.
    pub alpha_grid: Vec<f64>,
    /// Step counts for the K sweep.
    pub steps_grid: Vec<usize>,
    /// Record wall-clock time per estimate. Off by default so result files
    /// are reproducible byte for byte.
    pub timing: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            snr_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
            methods: vec![
                Method::Ls,
                Method::Omp,
                Method::Mmse,
                Method::DiffpaceOracle,
            ],
            trials: 100,
            channels: ChannelSource::Dataset,
            alpha_grid: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            steps_grid: vec![20, 50, 100],
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub lambda: Vec<f64>,
    pub beta: Vec<f64>,
    pub trials: usize,
    /// Score source searched over, `diffpace` or `diffpace-oracle`.
    pub method: Method,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            lambda: vec![0.001, 0.006, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0],
            beta: vec![0.03, 0.05, 0.1, 0.3, 1.0, 3.0],
            trials: 20,
            method: Method::DiffpaceOracle,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => LabError::Missing(path.to_path_buf()),
            _ => LabError::io(path, e),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            LabError::Config(m) => LabError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::Config(m));
        let array = self.array.array_config()?;
        self.scenario.spec()?;
        self.shift.apply(&self.scenario).spec()?;
        if self.dataset.samples < 2 {
            return bad("dataset.samples must be at least 2".into());
        }
        if !(self.dataset.train_fraction > 0.0 && self.dataset.train_fraction < 1.0) {
            return bad("dataset.train_fraction must lie in (0, 1)".into());
        }
        if !(self.pilots.alpha.is_finite() && self.pilots.alpha > 0.0 && self.pilots.alpha <= 1.0) {
            return bad(format!(
                "pilots.alpha must lie in (0, 1], got {}",
                self.pilots.alpha
            ));
        }
        if self.pilots.m_t.is_some() != self.pilots.m_r.is_some() {
            return bad("pilots.m_t and pilots.m_r must be given together".into());
        }
        if self.pilots.n_b == 0 || self.pilots.n_b > 16 {
            return bad("pilots.n_b must lie in 1..=16".into());
        }
        self.train.train_config(self.seed)?;
        self.train.arch(&array)?;
        if self.solver.steps == 0 {
            return bad("solver.steps must be at least 1".into());
        }
        let (l, b) = self.solver.lambda_beta(self.array.preset);
        if !(l > 0.0 && l.is_finite() && b >= 0.0 && b.is_finite()) {
            return bad(format!(
                "solver: need lambda > 0 and beta >= 0, got ({l}, {b})"
            ));
        }
        let run = &self.experiment;
        if run.trials == 0 {
            return bad("experiment.trials must be at least 1".into());
        }
        if run.snr_db.is_empty() || run.snr_db.iter().any(|s| !s.is_finite()) {
            return bad("experiment.snr_db must be a non-empty list of finite values".into());
        }
        if run.methods.is_empty() {
            return bad("experiment.methods must not be empty".into());
        }
        if run.alpha_grid.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return bad("experiment.alpha_grid entries must lie in (0, 1]".into());
        }
        if run.steps_grid.contains(&0) {
            return bad("experiment.steps_grid entries must be at least 1".into());
        }
        let g = &self.gridsearch;
        if g.trials == 0 {
            return bad("gridsearch.trials must be at least 1".into());
        }
        if !g.method.is_diffusion() {
            return bad("gridsearch.method must be diffpace or diffpace-oracle".into());
        }
        if g.lambda.iter().any(|v| !(*v > 0.0 && v.is_finite()))
            || g.beta.iter().any(|v| !(*v >= 0.0 && v.is_finite()))
        {
            return bad("gridsearch: lambda values must be > 0 and beta values >= 0".into());
        }
        if self.shift.samples == Some(0) {
            return bad("shift.samples must be at least 1".into());
        }
        Ok(())
    }

    pub fn array_config(&self) -> ArrayConfig {
        self.array.array_config().expect("validated")
    }

    pub fn scenario_spec(&self) -> ScenarioSpec {
        self.scenario.spec().expect("validated")
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.out_dir.join(&self.dataset.path)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out_dir.join(&self.train.checkpoint)
    }
}
