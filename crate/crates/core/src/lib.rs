//! Channel-estimation core for hybrid-beamforming UM-MIMO links.
//!
//! Everything here is `no_std` + `alloc`: array geometry and codebooks,
//! HPSM channel synthesis, pilot measurement models, classical estimators,
//! the diffusion denoiser (with its own backprop and Adam), and the
//! plug-and-play consistency solver. File formats, configuration and the
//! experiment CLI live in the `diffpace` companion crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod channel;
pub mod diffusion;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod measurement;
pub mod rng;
pub mod solver;

pub use error::{Error, Result};
pub use linalg::{CMatrix, CVector, C64};
