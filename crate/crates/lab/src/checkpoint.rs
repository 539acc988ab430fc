//! Denoiser checkpoints: a TOML header describing the network and its
//! normalization, followed by `θ` and the EMA parameters `θ′`.

use std::path::Path;

use diffpace_core::diffusion::{Arch, DenoiserModel};
use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{LabError, Result};

pub const MAGIC: &[u8; 4] = b"DPCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchDescriptor {
    pub rows: usize,
    pub cols: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub embed: usize,
}

impl From<Arch> for ArchDescriptor {
    fn from(a: Arch) -> Self {
        Self {
            rows: a.rows,
            cols: a.cols,
            hidden: a.hidden,
            kernel: a.kernel,
            embed: a.embed,
        }
    }
}

impl From<ArchDescriptor> for Arch {
    fn from(d: ArchDescriptor) -> Self {
        Arch {
            rows: d.rows,
            cols: d.cols,
            hidden: d.hidden,
            kernel: d.kernel,
            embed: d.embed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub arch: ArchDescriptor,
    pub param_count: usize,
    pub scale: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub ema_rate: f64,
    #[serde(with = "container::hex_u64")]
    pub seed: u64,
    pub epoch: usize,
}

fn header(model: &DenoiserModel) -> CheckpointHeader {
    CheckpointHeader {
        arch: model.arch.into(),
        param_count: model.param_count(),
        scale: model.scale,
        sigma_min: model.sigma_min,
        sigma_max: model.sigma_max,
        ema_rate: model.ema_rate,
        seed: model.seed,
        epoch: model.epoch,
    }
}

fn payload(model: &DenoiserModel) -> Vec<f64> {
    model
        .theta
        .iter()
        .chain(&model.theta_ema)
        .copied()
        .collect()
}

pub fn to_bytes(model: &DenoiserModel) -> Vec<u8> {
    let h = toml::to_string(&header(model)).expect("header serializes");
    container::encode(MAGIC, VERSION, &h, &payload(model))
}

pub fn save(model: &DenoiserModel, path: &Path) -> Result<()> {
    let h = toml::to_string(&header(model)).expect("header serializes");
    container::write(path, MAGIC, VERSION, &h, &payload(model))
}

/// Loads a checkpoint; with `expect = Some(arch)` a different network shape
/// is an error.
pub fn load(path: &Path, expect: Option<Arch>) -> Result<DenoiserModel> {
    let c = container::read(path, MAGIC, VERSION)?;
    let h: CheckpointHeader =
        toml::from_str(&c.header).map_err(|e| LabError::format(path, format!("header: {e}")))?;
    let arch: Arch = h.arch.into();
    arch.validate()
        .map_err(|e| LabError::format(path, e.to_string()))?;
    if let Some(want) = expect {
        if want != arch {
            return Err(LabError::format(
                path,
                format!(
                    "architecture mismatch: file has {:?}, configuration expects {:?}",
                    h.arch,
                    ArchDescriptor::from(want)
                ),
            ));
        }
    }
    let n = arch.param_count();
    if h.param_count != n || c.payload.len() != 2 * n {
        return Err(LabError::format(
            path,
            format!(
                "parameter count mismatch: architecture needs {n}, header says {}, payload holds {}",
                h.param_count,
                c.payload.len()
            ),
        ));
    }
    if !(h.scale > 0.0 && h.sigma_min > 0.0 && h.sigma_min < h.sigma_max) {
        return Err(LabError::format(
            path,
            "invalid normalization or noise range",
        ));
    }
    let (theta, ema) = c.payload.split_at(n);
    Ok(DenoiserModel {
        arch,
        theta: theta.to_vec(),
        theta_ema: ema.to_vec(),
        ema_rate: h.ema_rate,
        scale: h.scale,
        sigma_min: h.sigma_min,
        sigma_max: h.sigma_max,
        seed: h.seed,
        epoch: h.epoch,
    })
}
