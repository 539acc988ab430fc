//! Uniform planar array geometry, steering vectors and angular codebooks.
//!
//! Antennas within a subarray are indexed x-outer, z-inner, i.e. the flat
//! index of element `(m_x, m_z)` is `m_x * n_z + m_z`. This fixes the
//! Kronecker order of steering vectors and, through it, every `vec`
//! convention downstream.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{ensure, Result};
use crate::linalg::{kron, kron_vec, unitarity_defect, CMatrix, CVector, C64, ZERO};

/// Tolerance used when asserting that a codebook is unitary.
pub const UNITARY_TOL: f64 = 1e-10;

/// Antenna grid of one subarray, `n_x` along the x axis and `n_z` along z.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SubarrayShape {
    pub n_x: usize,
    pub n_z: usize,
}

impl SubarrayShape {
    pub const fn new(n_x: usize, n_z: usize) -> Self {
        Self { n_x, n_z }
    }

    pub const fn len(&self) -> usize {
        self.n_x * self.n_z
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Transmit/receive array layout: antenna counts, subarray partition and RF
/// chains on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrayConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub k_t: usize,
    pub k_r: usize,
    pub l_t: usize,
    pub l_r: usize,
    pub tx_subarray: SubarrayShape,
    pub rx_subarray: SubarrayShape,
}

impl ArrayConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_t: usize,
        n_r: usize,
        k_t: usize,
        k_r: usize,
        l_t: usize,
        l_r: usize,
        tx_subarray: SubarrayShape,
        rx_subarray: SubarrayShape,
    ) -> Result<Self> {
        let cfg = Self {
            n_t,
            n_r,
            k_t,
            k_r,
            l_t,
            l_r,
            tx_subarray,
            rx_subarray,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.n_t > 0 && self.n_r > 0,
            "antenna counts must be positive"
        );
        ensure!(
            self.k_t > 0 && self.k_r > 0,
            "subarray counts must be positive"
        );
        ensure!(
            self.n_t.is_multiple_of(self.k_t),
            "n_t = {} not divisible by k_t = {}",
            self.n_t,
            self.k_t
        );
        ensure!(
            self.n_r.is_multiple_of(self.k_r),
            "n_r = {} not divisible by k_r = {}",
            self.n_r,
            self.k_r
        );
        ensure!(
            self.tx_subarray.len() == self.n_t / self.k_t,
            "tx subarray {}x{} does not hold n_t/k_t = {} antennas",
            self.tx_subarray.n_x,
            self.tx_subarray.n_z,
            self.n_t / self.k_t
        );
        ensure!(
            self.rx_subarray.len() == self.n_r / self.k_r,
            "rx subarray {}x{} does not hold n_r/k_r = {} antennas",
            self.rx_subarray.n_x,
            self.rx_subarray.n_z,
            self.n_r / self.k_r
        );
        ensure!(
            self.l_t >= 1 && self.l_t <= self.n_t,
            "need 1 <= l_t <= n_t, got l_t = {}",
            self.l_t
        );
        ensure!(
            self.l_r >= 1 && self.l_r <= self.n_r,
            "need 1 <= l_r <= n_r, got l_r = {}",
            self.l_r
        );
        Ok(())
    }

    /// Desk-scale preset used by CI: 32x16 antennas, two subarrays per side.
    pub fn desk() -> Self {
        Self {
            n_t: 32,
            n_r: 16,
            k_t: 2,
            k_r: 2,
            l_t: 2,
            l_r: 4,
            tx_subarray: SubarrayShape::new(4, 4),
            rx_subarray: SubarrayShape::new(4, 2),
        }
    }

    /// 60 GHz-like preset.
    pub fn mmwave() -> Self {
        Self {
            n_t: 64,
            n_r: 16,
            k_t: 2,
            k_r: 2,
            l_t: 2,
            l_r: 4,
            tx_subarray: SubarrayShape::new(8, 4),
            rx_subarray: SubarrayShape::new(4, 2),
        }
    }

    /// 0.3 THz-like preset.
    pub fn thz() -> Self {
        Self {
            n_t: 256,
            n_r: 64,
            k_t: 2,
            k_r: 2,
            l_t: 4,
            l_r: 8,
            tx_subarray: SubarrayShape::new(16, 8),
            rx_subarray: SubarrayShape::new(8, 4),
        }
    }

    pub fn n_t_sub(&self) -> usize {
        self.n_t / self.k_t
    }

    pub fn n_r_sub(&self) -> usize {
        self.n_r / self.k_r
    }

    /// Block-diagonal DFT codebooks `(Ā_R, Ā_T)`.
    pub fn codebooks(&self) -> Result<(Codebook, Codebook)> {
        let rx = dft_codebook(self.rx_subarray.n_x, self.rx_subarray.n_z)?;
        let tx = dft_codebook(self.tx_subarray.n_x, self.tx_subarray.n_z)?;
        let rx_blocks: Vec<CMatrix> = (0..self.k_r).map(|_| rx.matrix.clone()).collect();
        let tx_blocks: Vec<CMatrix> = (0..self.k_t).map(|_| tx.matrix.clone()).collect();
        Ok((blkdiag_codebook(&rx_blocks)?, blkdiag_codebook(&tx_blocks)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodebookKind {
    FullDft,
    BlockDiagonal { blocks: usize },
}

/// A unitary angular-domain dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    matrix: CMatrix,
    kind: CodebookKind,
}

impl Codebook {
    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn kind(&self) -> CodebookKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    /// Identity codebook of size `n`; handy for tests and spatial-domain
    /// estimation.
    pub fn identity(n: usize) -> Self {
        Self {
            matrix: CMatrix::identity(n, n),
            kind: CodebookKind::BlockDiagonal { blocks: 1 },
        }
    }
}

fn phase_ramp(n: usize, spatial_freq: f64) -> CVector {
    CVector::from_fn(n, |m, _| {
        C64::from_polar(1.0, -PI * spatial_freq * m as f64)
    })
}

/// UPA steering vector `a(θ, φ)`, unit norm, x-phase ⊗ z-phase.
pub fn upa_steering(theta: f64, phi: f64, n_x: usize, n_z: usize) -> Result<CVector> {
    ensure!(
        n_x >= 1 && n_z >= 1,
        "array dimensions must be >= 1, got {n_x}x{n_z}"
    );
    ensure!(
        theta.is_finite() && phi.is_finite(),
        "steering angles must be finite"
    );
    let ux = libm::sin(theta) * libm::cos(phi);
    let uz = libm::sin(phi);
    let scale = 1.0 / libm::sqrt((n_x * n_z) as f64);
    Ok(kron_vec(&phase_ramp(n_x, ux), &phase_ramp(n_z, uz)) * C64::new(scale, 0.0))
}

fn dft_matrix(n: usize) -> CMatrix {
    let scale = 1.0 / libm::sqrt(n as f64);
    CMatrix::from_fn(n, n, |m, k| {
        let e = ((m * k) % n) as f64 / n as f64;
        C64::from_polar(scale, -2.0 * PI * e)
    })
}

/// 2D DFT codebook `F_x ⊗ F_z`; column `(k_x, k_z)` is the steering vector
/// with spatial frequencies `(2k_x/n_x, 2k_z/n_z)`.
pub fn dft_codebook(n_x: usize, n_z: usize) -> Result<Codebook> {
    ensure!(
        n_x >= 1 && n_z >= 1,
        "codebook dimensions must be >= 1, got {n_x}x{n_z}"
    );
    Ok(Codebook {
        matrix: kron(&dft_matrix(n_x), &dft_matrix(n_z)),
        kind: CodebookKind::FullDft,
    })
}

/// Block-diagonal codebook from square unitary blocks.
pub fn blkdiag_codebook(blocks: &[CMatrix]) -> Result<Codebook> {
    ensure!(!blocks.is_empty(), "blkdiag needs at least one block");
    let mut dim = 0;
    for (i, b) in blocks.iter().enumerate() {
        ensure!(
            b.is_square(),
            "block {i} is {}x{}, not square",
            b.nrows(),
            b.ncols()
        );
        let defect = unitarity_defect(b);
        ensure!(
            defect <= UNITARY_TOL,
            "block {i} is not unitary (defect {defect:e})"
        );
        dim += b.nrows();
    }
    let mut matrix = CMatrix::from_element(dim, dim, ZERO);
    let mut at = 0;
    for b in blocks {
        let n = b.nrows();
        matrix.view_mut((at, at), (n, n)).copy_from(b);
        at += n;
    }
    Ok(Codebook {
        matrix,
        kind: CodebookKind::BlockDiagonal {
            blocks: blocks.len(),
        },
    })
}
