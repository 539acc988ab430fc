//! Dense complex linear algebra helpers on top of `nalgebra`.
//!
//! Matrix products go through `matrixmultiply::zgemm`, which is an order of
//! magnitude faster than nalgebra's generic complex path for the sizes used
//! here (hundreds of rows and columns).

use alloc::vec::Vec;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use num_complex::Complex;

use crate::error::{ensure, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// `a * b` for column-major complex matrices.
pub fn matmul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    assert_eq!(a.ncols(), b.nrows(), "matmul: inner dimensions differ");
    let (m, k, n) = (a.nrows(), a.ncols(), b.ncols());
    let mut c = CMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: Complex<f64> is #[repr(C)] { re, im }, layout-identical to
    // [f64; 2]; all three buffers are contiguous column-major with the
    // strides given below and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::zgemm(
            matrixmultiply::CGemmOption::Standard,
            matrixmultiply::CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.as_ptr() as *const [f64; 2],
            1,
            m as isize,
            b.as_ptr() as *const [f64; 2],
            1,
            k as isize,
            [0.0, 0.0],
            c.as_mut_ptr() as *mut [f64; 2],
            1,
            m as isize,
        );
    }
    c
}

/// `aᴴ * b`.
pub fn matmul_adj_a(a: &CMatrix, b: &CMatrix) -> CMatrix {
    matmul(&a.adjoint(), b)
}

/// `a * bᴴ`.
pub fn matmul_adj_b(a: &CMatrix, b: &CMatrix) -> CMatrix {
    matmul(a, &b.adjoint())
}

/// `a * x` for a vector `x`.
pub fn matvec(a: &CMatrix, x: &CVector) -> CVector {
    assert_eq!(a.ncols(), x.len(), "matvec: dimension mismatch");
    let mut y = CVector::zeros(a.nrows());
    for (j, xj) in x.iter().enumerate() {
        if *xj == ZERO {
            continue;
        }
        let col = a.column(j);
        for (yi, aij) in y.iter_mut().zip(col.iter()) {
            *yi += aij * xj;
        }
    }
    y
}

/// `aᴴ * x`.
pub fn matvec_adj(a: &CMatrix, x: &CVector) -> CVector {
    assert_eq!(a.nrows(), x.len(), "matvec_adj: dimension mismatch");
    let mut y = CVector::zeros(a.ncols());
    for (j, yj) in y.iter_mut().enumerate() {
        let col = a.column(j);
        let mut acc = ZERO;
        for (aij, xi) in col.iter().zip(x.iter()) {
            acc += aij.conj() * xi;
        }
        *yj = acc;
    }
    y
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = CMatrix::zeros(ar * br, ac * bc);
    for ja in 0..ac {
        for jb in 0..bc {
            let col = ja * bc + jb;
            for ia in 0..ar {
                let s = a[(ia, ja)];
                if s == ZERO {
                    continue;
                }
                for ib in 0..br {
                    out[(ia * br + ib, col)] = s * b[(ib, jb)];
                }
            }
        }
    }
    out
}

/// Kronecker product of two column vectors.
pub fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    let mut out = CVector::zeros(a.len() * b.len());
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            out[i * b.len() + j] = ai * bj;
        }
    }
    out
}

/// Column-major vectorization.
pub fn vec_of(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`].
pub fn unvec(v: &CVector, rows: usize, cols: usize) -> Result<CMatrix> {
    ensure!(
        v.len() == rows * cols,
        "cannot reshape length {} into {}x{}",
        v.len(),
        rows,
        cols
    );
    Ok(CMatrix::from_column_slice(rows, cols, v.as_slice()))
}

pub fn norm_sq(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// Largest entrywise modulus of `a - b`.
pub fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// `‖AᴴA − I‖_max`, the unitarity defect of a square matrix.
pub fn unitarity_defect(a: &CMatrix) -> f64 {
    let g = matmul_adj_a(a, a);
    let mut worst: f64 = 0.0;
    for j in 0..g.ncols() {
        for i in 0..g.nrows() {
            let target = if i == j { ONE } else { ZERO };
            worst = worst.max((g[(i, j)] - target).norm());
        }
    }
    worst
}

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermitian_defect(a: &CMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..a.ncols() {
        for i in 0..=j.min(a.nrows().saturating_sub(1)) {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn identity(n: usize) -> CMatrix {
    CMatrix::identity(n, n)
}

/// Adds `load` to the diagonal in place.
pub fn add_diagonal(a: &mut CMatrix, load: f64) {
    for i in 0..a.nrows().min(a.ncols()) {
        a[(i, i)].re += load;
    }
}

pub fn mean_diagonal(a: &CMatrix) -> f64 {
    let n = a.nrows().min(a.ncols());
    if n == 0 {
        return 0.0;
    }
    (0..n).map(|i| a[(i, i)].re).sum::<f64>() / n as f64
}

/// Cholesky factor of a Hermitian positive-definite matrix; `None` when the
/// factorization breaks down.
pub fn cholesky(a: &CMatrix) -> Option<Cholesky<C64, Dyn>> {
    // nalgebra takes complex square roots of the pivots, so a negative pivot
    // yields an imaginary diagonal instead of a failure
    Cholesky::new(a.clone()).filter(|c| {
        let l = c.l_dirty();
        (0..l.nrows()).all(|i| {
            let d = l[(i, i)];
            d.re.is_finite() && d.re > 0.0 && d.im.abs() <= 1e-6 * d.re
        })
    })
}

/// [`cholesky`] that also rejects factors whose pivot ratio exceeds
/// `1e7`, i.e. Gram condition numbers beyond roughly `1e14`.
pub fn cholesky_well_conditioned(a: &CMatrix) -> Option<Cholesky<C64, Dyn>> {
    cholesky(a).filter(well_conditioned)
}

/// Hermitian eigendecomposition `A = U diag(λ) Uᴴ`, eigenvalues ascending
/// order not guaranteed.
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

pub fn hermitian_eigen(a: &CMatrix) -> HermitianEigen {
    let eig = SymmetricEigen::new(a.clone());
    HermitianEigen {
        values: eig.eigenvalues.iter().copied().collect(),
        vectors: eig.eigenvectors,
    }
}

/// Minimum-norm least-squares solution via SVD, singular values below
/// `rel_tol * σ_max` treated as zero.
pub fn pinv_solve(a: &CMatrix, y: &CVector, rel_tol: f64) -> CVector {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = (smax * rel_tol).max(f64::MIN_POSITIVE);
    let u = svd.u.as_ref().expect("svd computed with u");
    let vt = svd.v_t.as_ref().expect("svd computed with v_t");
    let mut coeff = matvec_adj(u, y);
    for (c, s) in coeff.iter_mut().zip(svd.singular_values.iter()) {
        *c = if *s > eps { *c / *s } else { ZERO };
    }
    matvec_adj(vt, &coeff)
}

/// Numerical rank with singular values above `threshold * σ_max`.
pub fn numerical_rank(a: &CMatrix, threshold: f64) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > threshold * smax).count()
}

/// Cached factorization of `ΦΦᴴ` for repeated minimum-norm solves.
///
/// When the Gram matrix is not numerically positive definite the factor is
/// taken of `ΦΦᴴ + ε I` with `ε = load · mean(diag)` and `loaded` is set.
pub struct GramFactor {
    phi: CMatrix,
    chol: Cholesky<C64, Dyn>,
    loaded: bool,
}

impl GramFactor {
    pub fn new(phi: &CMatrix, load: f64) -> Result<Self> {
        ensure!(
            phi.nrows() > 0 && phi.ncols() > 0,
            "empty measurement matrix"
        );
        ensure!(
            phi.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
            "measurement matrix has non-finite entries"
        );
        let gram = matmul_adj_b(phi, phi);
        let scale = mean_diagonal(&gram);
        ensure!(scale > 0.0, "measurement matrix is zero");
        // a positive pivot is not enough: reject factors whose pivots span
        // more than ~1/ε of dynamic range
        let (chol, loaded) = match cholesky_well_conditioned(&gram) {
            Some(c) => (c, false),
            None => {
                let mut g = gram;
                add_diagonal(&mut g, load * scale);
                let c = cholesky(&g).ok_or_else(|| {
                    crate::error::Error::Numerical(alloc::format!(
                        "Gram matrix not factorizable even with loading {load}"
                    ))
                })?;
                (c, true)
            }
        };
        Ok(Self {
            phi: phi.clone(),
            chol,
            loaded,
        })
    }

    pub fn phi(&self) -> &CMatrix {
        &self.phi
    }

    /// Whether diagonal loading was needed.
    pub fn loaded(&self) -> bool {
        self.loaded
    }

    /// `(ΦΦᴴ)⁻¹ r`.
    pub fn solve(&self, r: &CVector) -> CVector {
        self.chol.solve(r)
    }

    /// `Φᴴ (ΦΦᴴ)⁻¹ r`.
    pub fn back_project(&self, r: &CVector) -> CVector {
        matvec_adj(&self.phi, &self.solve(r))
    }
}

fn well_conditioned(c: &Cholesky<C64, Dyn>) -> bool {
    let l = c.l_dirty();
    let n = l.nrows();
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for i in 0..n {
        let d = l[(i, i)].re;
        if !d.is_finite() {
            return false;
        }
        lo = lo.min(d);
        hi = hi.max(d);
    }
    lo > 0.0 && hi / lo < 1e7
}

pub fn to_dvector(v: Vec<C64>) -> CVector {
    DVector::from_vec(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn sample_matrix(rows: usize, cols: usize, seed: u64) -> CMatrix {
        let mut state = seed;
        CMatrix::from_fn(rows, cols, |_, _| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let a = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            let b = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
            c(a, b)
        })
    }

    #[test]
    fn zgemm_matches_naive_product() {
        let a = sample_matrix(7, 5, 1);
        let b = sample_matrix(5, 9, 2);
        let fast = matmul(&a, &b);
        let slow = &a * &b;
        assert!(max_abs_diff(fast.as_slice(), slow.as_slice()) < 1e-13);
        let d = sample_matrix(7, 3, 8);
        let fast_adj = matmul_adj_a(&a, &d);
        assert!(max_abs_diff(fast_adj.as_slice(), (a.adjoint() * &d).as_slice()) < 1e-13);
        let e = sample_matrix(4, 5, 9);
        let fast_adj_b = matmul_adj_b(&a, &e);
        assert!(max_abs_diff(fast_adj_b.as_slice(), (&a * e.adjoint()).as_slice()) < 1e-13);
    }

    #[test]
    fn matvec_variants_agree_with_nalgebra() {
        let a = sample_matrix(6, 4, 3);
        let x = CVector::from_fn(4, |i, _| c(i as f64, 1.0));
        let y = CVector::from_fn(6, |i, _| c(1.0, -(i as f64)));
        assert!(max_abs_diff(matvec(&a, &x).as_slice(), (&a * &x).as_slice()) < 1e-13);
        assert!(max_abs_diff(matvec_adj(&a, &y).as_slice(), (a.adjoint() * &y).as_slice()) < 1e-13);
    }

    #[test]
    fn kron_vec_identity() {
        // vec(A X B) = (Bᵀ ⊗ A) vec(X)
        let a = sample_matrix(3, 4, 4);
        let x = sample_matrix(4, 2, 5);
        let b = sample_matrix(2, 5, 6);
        let lhs = vec_of(&(&a * &x * &b));
        let rhs = matvec(&kron(&b.transpose(), &a), &vec_of(&x));
        assert!(max_abs_diff(lhs.as_slice(), rhs.as_slice()) < 1e-12);
    }

    #[test]
    fn pinv_solve_is_min_norm() {
        let a = sample_matrix(3, 6, 7);
        let y = CVector::from_fn(3, |i, _| c(1.0 + i as f64, 0.5));
        let x = pinv_solve(&a, &y, 1e-12);
        assert!(max_abs_diff((&a * &x).as_slice(), y.as_slice()) < 1e-10);
        // min-norm solution lies in the row space: x = Aᴴ w
        let w = pinv_solve(&a.adjoint(), &x, 1e-12);
        assert!(max_abs_diff((a.adjoint() * w).as_slice(), x.as_slice()) < 1e-10);
    }
}
