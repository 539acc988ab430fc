//! Channel synthesis: spherical-wave (SWM), planar-wave (PWM) and hybrid
//! planar-spherical (HPSM) models, beamspace transforms and a synthetic
//! scenario sampler.

use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{ensure, Result};
use crate::geometry::{upa_steering, ArrayConfig, Codebook, SubarrayShape};
use crate::linalg::{matmul, matmul_adj_a, matmul_adj_b, CMatrix, CVector, C64};
use crate::rng::uniform;

/// Azimuth/elevation pair in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Angles {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Angles {
    pub const fn new(azimuth: f64, elevation: f64) -> Self {
        Self { azimuth, elevation }
    }
}

/// Parameters of one path between one Tx subarray and one Rx subarray.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SubarrayPath {
    /// Gain magnitude (linear).
    pub gain: f64,
    /// Phase shift in radians; enters as `exp(-j * phase)`.
    pub phase: f64,
    pub aoa: Angles,
    pub aod: Angles,
}

/// Path parameters for every `(path, tx subarray, rx subarray)` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct PathParams {
    num_paths: usize,
    k_t: usize,
    k_r: usize,
    tuples: Vec<SubarrayPath>,
}

impl PathParams {
    /// `tuples` is ordered path-major, then Tx subarray, then Rx subarray.
    pub fn new(
        num_paths: usize,
        k_t: usize,
        k_r: usize,
        tuples: Vec<SubarrayPath>,
    ) -> Result<Self> {
        ensure!(k_t >= 1 && k_r >= 1, "subarray counts must be positive");
        ensure!(
            tuples.len() == num_paths * k_t * k_r,
            "expected {} parameter tuples for L={num_paths}, K_t={k_t}, K_r={k_r}, got {}",
            num_paths * k_t * k_r,
            tuples.len()
        );
        for (i, p) in tuples.iter().enumerate() {
            ensure!(
                p.gain.is_finite() && p.gain >= 0.0,
                "tuple {i}: gain must be finite and non-negative"
            );
            ensure!(
                p.phase.is_finite()
                    && p.aoa.azimuth.is_finite()
                    && p.aoa.elevation.is_finite()
                    && p.aod.azimuth.is_finite()
                    && p.aod.elevation.is_finite(),
                "tuple {i}: angles and phase must be finite"
            );
        }
        Ok(Self {
            num_paths,
            k_t,
            k_r,
            tuples,
        })
    }

    /// Far-field parameters for a single subarray on each side.
    pub fn planar(paths: Vec<SubarrayPath>) -> Result<Self> {
        let n = paths.len();
        Self::new(n, 1, 1, paths)
    }

    pub fn num_paths(&self) -> usize {
        self.num_paths
    }

    pub fn k_t(&self) -> usize {
        self.k_t
    }

    pub fn k_r(&self) -> usize {
        self.k_r
    }

    pub fn tuples(&self) -> &[SubarrayPath] {
        &self.tuples
    }

    pub fn get(&self, path: usize, kt: usize, kr: usize) -> &SubarrayPath {
        &self.tuples[(path * self.k_t + kt) * self.k_r + kr]
    }

    pub fn get_mut(&mut self, path: usize, kt: usize, kr: usize) -> &mut SubarrayPath {
        &mut self.tuples[(path * self.k_t + kt) * self.k_r + kr]
    }

    /// The planar parameters seen by one subarray pair.
    pub fn restrict(&self, kt: usize, kr: usize) -> PathParams {
        let tuples = (0..self.num_paths).map(|l| *self.get(l, kt, kr)).collect();
        PathParams {
            num_paths: self.num_paths,
            k_t: 1,
            k_r: 1,
            tuples,
        }
    }
}

fn planar_block(
    paths: &PathParams,
    kt: usize,
    kr: usize,
    rx: SubarrayShape,
    tx: SubarrayShape,
) -> Result<CMatrix> {
    let mut h = CMatrix::zeros(rx.len(), tx.len());
    for l in 0..paths.num_paths {
        let p = paths.get(l, kt, kr);
        let a_r = upa_steering(p.aoa.azimuth, p.aoa.elevation, rx.n_x, rx.n_z)?;
        let a_t = upa_steering(p.aod.azimuth, p.aod.elevation, tx.n_x, tx.n_z)?;
        let coeff = C64::from_polar(p.gain, -p.phase);
        for j in 0..tx.len() {
            let tj = a_t[j].conj() * coeff;
            for i in 0..rx.len() {
                h[(i, j)] += a_r[i] * tj;
            }
        }
    }
    Ok(h)
}

/// Planar-wave channel `Σ_l α_l e^{-jφ_l} a_R a_Tᴴ` for single-subarray
/// arrays.
pub fn pwm_channel(paths: &PathParams, cfg: &ArrayConfig) -> Result<CMatrix> {
    ensure!(
        cfg.k_t == 1 && cfg.k_r == 1,
        "planar-wave model needs one subarray per side, got K_t={}, K_r={}",
        cfg.k_t,
        cfg.k_r
    );
    ensure!(
        paths.k_t == 1 && paths.k_r == 1,
        "planar-wave model needs single-subarray path parameters"
    );
    planar_block(paths, 0, 0, cfg.rx_subarray, cfg.tx_subarray)
}

/// Hybrid planar-spherical channel: block `(k_r, k_t)` is the planar-wave
/// response of that subarray pair under its own path parameters.
pub fn hpsm_channel(paths: &PathParams, cfg: &ArrayConfig) -> Result<CMatrix> {
    ensure!(
        paths.k_t == cfg.k_t && paths.k_r == cfg.k_r,
        "path parameters are for K_t={}, K_r={} but the array has K_t={}, K_r={}",
        paths.k_t,
        paths.k_r,
        cfg.k_t,
        cfg.k_r
    );
    let (nr_sub, nt_sub) = (cfg.n_r_sub(), cfg.n_t_sub());
    let mut h = CMatrix::zeros(cfg.n_r, cfg.n_t);
    for kr in 0..cfg.k_r {
        for kt in 0..cfg.k_t {
            let block = planar_block(paths, kt, kr, cfg.rx_subarray, cfg.tx_subarray)?;
            h.view_mut((kr * nr_sub, kt * nt_sub), (nr_sub, nt_sub))
                .copy_from(&block);
        }
    }
    Ok(h)
}

/// Per-antenna-pair path data for the spherical-wave model.
#[derive(Debug, Clone, PartialEq)]
pub struct SwmParams {
    pub n_r: usize,
    pub n_t: usize,
    pub num_paths: usize,
    /// `|α_l^{r,t}|`, indexed `(l * n_r + r) * n_t + t`.
    pub gains: Vec<f64>,
    /// Propagation distances in metres, same indexing as `gains`.
    pub distances: Vec<f64>,
}

/// Spherical-wave channel `H[r,t] = Σ_l |α| exp(-j 2π d / λ)`.
pub fn swm_channel(params: &SwmParams, wavelength: f64) -> Result<CMatrix> {
    let n = params.num_paths * params.n_r * params.n_t;
    ensure!(
        params.gains.len() == n && params.distances.len() == n,
        "expected {n} gains and distances"
    );
    ensure!(
        wavelength.is_finite() && wavelength > 0.0,
        "wavelength must be positive"
    );
    ensure!(
        params.distances.iter().all(|d| d.is_finite() && *d > 0.0),
        "propagation distances must be positive"
    );
    let mut h = CMatrix::zeros(params.n_r, params.n_t);
    for l in 0..params.num_paths {
        for r in 0..params.n_r {
            for t in 0..params.n_t {
                let idx = (l * params.n_r + r) * params.n_t + t;
                let d = params.distances[idx];
                h[(r, t)] += C64::from_polar(params.gains[idx], -TAU * d / wavelength);
            }
        }
    }
    Ok(h)
}

fn check_codebooks(rows: usize, cols: usize, rx: &Codebook, tx: &Codebook) -> Result<()> {
    ensure!(
        rx.dim() == rows && tx.dim() == cols,
        "codebooks are {}x{} / {}x{} but the channel is {rows}x{cols}",
        rx.dim(),
        rx.dim(),
        tx.dim(),
        tx.dim()
    );
    Ok(())
}

/// `H̄_b = Ā_Rᴴ H Ā_T`.
pub fn to_beamspace(h: &CMatrix, rx: &Codebook, tx: &Codebook) -> Result<CMatrix> {
    check_codebooks(h.nrows(), h.ncols(), rx, tx)?;
    Ok(matmul(&matmul_adj_a(rx.matrix(), h), tx.matrix()))
}

/// `H = Ā_R H̄_b Ā_Tᴴ`.
pub fn from_beamspace(hb: &CMatrix, rx: &Codebook, tx: &Codebook) -> Result<CMatrix> {
    check_codebooks(hb.nrows(), hb.ncols(), rx, tx)?;
    Ok(matmul_adj_b(&matmul(rx.matrix(), hb), tx.matrix()))
}

/// One channel realization in both domains.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    pub spatial: CMatrix,
    pub beamspace: CMatrix,
    pub paths: Option<PathParams>,
}

impl ChannelSample {
    pub fn from_paths(
        paths: PathParams,
        cfg: &ArrayConfig,
        rx: &Codebook,
        tx: &Codebook,
    ) -> Result<Self> {
        let spatial = hpsm_channel(&paths, cfg)?;
        let beamspace = to_beamspace(&spatial, rx, tx)?;
        Ok(Self {
            spatial,
            beamspace,
            paths: Some(paths),
        })
    }

    pub fn from_beamspace(beamspace: CMatrix, rx: &Codebook, tx: &Codebook) -> Result<Self> {
        let spatial = from_beamspace(&beamspace, rx, tx)?;
        Ok(Self {
            spatial,
            beamspace,
            paths: None,
        })
    }

    /// `vec(H̄_b)`, column-major.
    pub fn beamspace_vec(&self) -> CVector {
        crate::linalg::vec_of(&self.beamspace)
    }
}

/// Synthetic scenario descriptor.
///
/// Each path leaves the Tx towards a departure point and reaches the Rx from
/// an arrival point; both points are shared by every subarray, so all
/// subarray pairs see the same paths. Pair-specific phases and amplitude
/// changes follow from the spherical distance between subarray centres and
/// those points. Per-subarray angles are the path's central angles plus an
/// optional Gaussian jitter of standard deviation `angular_spread`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub min_paths: usize,
    pub max_paths: usize,
    pub azimuth_range: (f64, f64),
    pub elevation_range: (f64, f64),
    /// Power drop between consecutive paths, dB.
    pub power_decay_db: f64,
    /// Gamma shape of the per-path power fading (unit mean); `0` disables
    /// fading.
    pub fading_shape: f64,
    pub angular_spread: f64,
    /// Centre-to-centre subarray pitch in wavelengths.
    pub subarray_spacing_wavelengths: f64,
    pub wavelength_m: f64,
    pub reflector_distance_m: (f64, f64),
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            min_paths: 1,
            max_paths: 5,
            azimuth_range: (-PI / 3.0, PI / 3.0),
            elevation_range: (-PI / 6.0, PI / 6.0),
            power_decay_db: 3.0,
            fading_shape: 4.0,
            angular_spread: 0.0,
            subarray_spacing_wavelengths: 8.0,
            wavelength_m: 0.005,
            reflector_distance_m: (3.0, 30.0),
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.min_paths <= self.max_paths,
            "min_paths ({}) exceeds max_paths ({})",
            self.min_paths,
            self.max_paths
        );
        for (name, (lo, hi)) in [
            ("azimuth_range", self.azimuth_range),
            ("elevation_range", self.elevation_range),
            ("reflector_distance_m", self.reflector_distance_m),
        ] {
            ensure!(
                lo.is_finite() && hi.is_finite() && lo <= hi,
                "{name} [{lo}, {hi}] is empty"
            );
        }
        ensure!(
            self.reflector_distance_m.0 > 0.0,
            "reflector distances must be positive"
        );
        ensure!(
            self.power_decay_db.is_finite() && self.power_decay_db >= 0.0,
            "power_decay_db must be >= 0"
        );
        ensure!(
            self.fading_shape.is_finite() && self.fading_shape >= 0.0,
            "fading_shape must be >= 0"
        );
        ensure!(
            self.angular_spread.is_finite() && self.angular_spread >= 0.0,
            "angular_spread must be >= 0"
        );
        ensure!(
            self.wavelength_m.is_finite() && self.wavelength_m > 0.0,
            "wavelength must be positive"
        );
        ensure!(
            self.subarray_spacing_wavelengths.is_finite()
                && self.subarray_spacing_wavelengths >= 0.0,
            "subarray spacing must be >= 0"
        );
        Ok(())
    }

    /// Mean per-pair power of each path for a draw with `num_paths` paths.
    /// Normalized so that `E‖H‖²_F = N_t N_r`.
    pub fn path_powers(&self, num_paths: usize, cfg: &ArrayConfig) -> Vec<f64> {
        let raw: Vec<f64> = (0..num_paths)
            .map(|l| libm::pow(10.0, -(l as f64) * self.power_decay_db / 10.0))
            .collect();
        let total: f64 = raw.iter().sum();
        let target = (cfg.n_t_sub() * cfg.n_r_sub()) as f64;
        raw.into_iter().map(|p| p * target / total).collect()
    }
}

fn direction(angles: Angles) -> [f64; 3] {
    let (sa, ca) = (libm::sin(angles.azimuth), libm::cos(angles.azimuth));
    let (se, ce) = (libm::sin(angles.elevation), libm::cos(angles.elevation));
    [sa * ce, ca * ce, se]
}

fn subarray_centre(k: usize, count: usize, pitch: f64) -> [f64; 3] {
    [(k as f64 - (count as f64 - 1.0) / 2.0) * pitch, 0.0, 0.0]
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
}

fn jitter<R: Rng + ?Sized>(rng: &mut R, centre: Angles, spread: f64) -> Angles {
    if spread == 0.0 {
        return centre;
    }
    let da: f64 = rng.sample(StandardNormal);
    let de: f64 = rng.sample(StandardNormal);
    Angles::new(centre.azimuth + spread * da, centre.elevation + spread * de)
}

/// Draw HPSM path parameters for `cfg` from `spec`.
pub fn sample_scenario<R: Rng + ?Sized>(
    rng: &mut R,
    spec: &ScenarioSpec,
    cfg: &ArrayConfig,
) -> Result<PathParams> {
    spec.validate()?;
    let num_paths = if spec.max_paths > spec.min_paths {
        rng.random_range(spec.min_paths..=spec.max_paths)
    } else {
        spec.min_paths
    };
    let powers = spec.path_powers(num_paths, cfg);
    let fading = if spec.fading_shape > 0.0 {
        Some(
            Gamma::new(spec.fading_shape, 1.0 / spec.fading_shape)
                .map_err(|_| crate::error::invalid!("bad fading shape {}", spec.fading_shape))?,
        )
    } else {
        None
    };
    let pitch = spec.subarray_spacing_wavelengths * spec.wavelength_m;
    let mut tuples = alloc::vec![SubarrayPath::default(); num_paths * cfg.k_t * cfg.k_r];

    for (l, power) in powers.iter().enumerate() {
        let aod = Angles::new(
            uniform(rng, spec.azimuth_range.0, spec.azimuth_range.1),
            uniform(rng, spec.elevation_range.0, spec.elevation_range.1),
        );
        let aoa = Angles::new(
            uniform(rng, spec.azimuth_range.0, spec.azimuth_range.1),
            uniform(rng, spec.elevation_range.0, spec.elevation_range.1),
        );
        let r_t = uniform(
            rng,
            spec.reflector_distance_m.0,
            spec.reflector_distance_m.1,
        );
        let r_r = uniform(
            rng,
            spec.reflector_distance_m.0,
            spec.reflector_distance_m.1,
        );
        let common_phase = uniform(rng, 0.0, TAU);
        let fade = fading.map_or(1.0, |g| g.sample(rng));
        let amplitude = libm::sqrt(power * fade);

        let u_t = direction(aod);
        let u_r = direction(aoa);
        let departure = [r_t * u_t[0], r_t * u_t[1], r_t * u_t[2]];
        let arrival = [r_r * u_r[0], r_r * u_r[1], r_r * u_r[2]];
        let reference = r_t + r_r;

        let tx_angles: Vec<Angles> = (0..cfg.k_t)
            .map(|_| jitter(rng, aod, spec.angular_spread))
            .collect();
        let rx_angles: Vec<Angles> = (0..cfg.k_r)
            .map(|_| jitter(rng, aoa, spec.angular_spread))
            .collect();

        for kt in 0..cfg.k_t {
            let d_t = distance(departure, subarray_centre(kt, cfg.k_t, pitch));
            for kr in 0..cfg.k_r {
                let d_r = distance(arrival, subarray_centre(kr, cfg.k_r, pitch));
                let d = d_t + d_r;
                let phase =
                    (common_phase + TAU * (d - reference) / spec.wavelength_m).rem_euclid(TAU);
                tuples[(l * cfg.k_t + kt) * cfg.k_r + kr] = SubarrayPath {
                    gain: amplitude * reference / d,
                    phase,
                    aoa: rx_angles[kr],
                    aod: tx_angles[kt],
                };
            }
        }
    }
    PathParams::new(num_paths, cfg.k_t, cfg.k_r, tuples)
}
