//! Convolutional denoiser with noise-level modulation and hand-written
//! reverse-mode gradients.
//!
//! Activations are stored channel-major as `[C][B·H·W]`. A complex
//! `N_r × N_t` matrix maps to a 2-channel `H = N_r` by `W = N_t` grid
//! (real, imaginary); its column-major entry `col·N_r + row` sits at pixel
//! `row·W + col`.
//!
//! Layer stack: four encoder convolutions, each followed by a per-sample
//! affine modulation `u = y·(1 + scale) + shift` and SiLU; three decoder
//! convolutions with SiLU; a final convolution back to two channels whose
//! output is added to the input. The modulation comes from a sinusoidal
//! encoding of the noise level fed through `Linear → SiLU → Linear`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure, Result};
use crate::linalg::{CVector, C64};

pub const ENCODER_LAYERS: usize = 4;
pub const DECODER_LAYERS: usize = 4;
const CONV_LAYERS: usize = ENCODER_LAYERS + DECODER_LAYERS;

/// Network shape. `rows × cols` is the input grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arch {
    pub rows: usize,
    pub cols: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub embed: usize,
}

#[derive(Debug, Clone, Copy)]
struct Span {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    lin1: Span,
    lin2: Span,
    conv: [Span; CONV_LAYERS],
    total: usize,
}

impl Arch {
    /// Default widths: 32 hidden channels, 3×3 kernels, 32-dim embedding.
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            hidden: 32,
            kernel: 3,
            embed: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.rows > 0 && self.cols > 0, "grid must be non-empty");
        ensure!(self.hidden > 0, "hidden width must be positive");
        ensure!(
            self.kernel % 2 == 1,
            "kernel size must be odd, got {}",
            self.kernel
        );
        ensure!(
            self.embed >= 2 && self.embed.is_multiple_of(2),
            "embedding width must be even and >= 2, got {}",
            self.embed
        );
        Ok(())
    }

    fn conv_dims(&self, layer: usize) -> (usize, usize) {
        let h = self.hidden;
        match layer {
            0 => (2, h),
            l if l == CONV_LAYERS - 1 => (h, 2),
            _ => (h, h),
        }
    }

    /// Length of the modulation vector: scale and shift per encoder layer.
    fn modulation(&self) -> usize {
        2 * ENCODER_LAYERS * self.hidden
    }

    fn layout(&self) -> Layout {
        let mut off = 0;
        let mut take = |n: usize| {
            let at = off;
            off += n;
            at
        };
        let e = self.embed;
        let m = self.modulation();
        let lin1 = Span {
            w: take(e * e),
            b: take(e),
        };
        let lin2 = Span {
            w: take(m * e),
            b: take(m),
        };
        let kk = self.kernel * self.kernel;
        let conv = core::array::from_fn(|l| {
            let (cin, cout) = self.conv_dims(l);
            Span {
                w: take(cout * cin * kk),
                b: take(cout),
            }
        });
        Layout {
            lin1,
            lin2,
            conv,
            total: off,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    /// Number of real entries in one sample.
    pub fn sample_len(&self) -> usize {
        2 * self.rows * self.cols
    }

    /// Offset and length of the final convolution's weights and bias.
    pub fn output_layer_range(&self) -> (usize, usize) {
        let lay = self.layout();
        let s = lay.conv[CONV_LAYERS - 1];
        (s.w, lay.total - s.w)
    }
}

/// Randomly initialized parameters; the output layer starts at zero so the
/// network is the identity map.
pub fn init_params<R: Rng + ?Sized>(arch: &Arch, rng: &mut R) -> Vec<f64> {
    let lay = arch.layout();
    let mut p = vec![0.0; lay.total];
    let mut fill = |start: usize, len: usize, fan_in: usize, rng: &mut R| {
        let std = 1.0 / libm::sqrt(fan_in as f64);
        for v in &mut p[start..start + len] {
            let z: f64 = rng.sample(StandardNormal);
            *v = std * z;
        }
    };
    let e = arch.embed;
    fill(lay.lin1.w, e * e, e, rng);
    fill(lay.lin2.w, arch.modulation() * e, e, rng);
    let kk = arch.kernel * arch.kernel;
    for l in 0..CONV_LAYERS - 1 {
        let (cin, cout) = arch.conv_dims(l);
        // SiLU halves the signal power roughly; the factor 2 keeps it steady
        fill(lay.conv[l].w, cout * cin * kk, cin * kk / 2, rng);
    }
    p
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Noise-level coordinate fed to the sinusoidal encoding.
fn noise_coordinate(sigma: f64) -> f64 {
    100.0 * libm::log1p(100.0 * sigma.max(0.0))
}

fn positional_encoding(sigma: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let c = noise_coordinate(sigma);
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let freq = libm::exp(-libm::log(10_000.0) * i as f64 / half as f64);
        out[i] = libm::sin(c * freq);
        out[half + i] = libm::cos(c * freq);
    }
    out
}

/// `c[m×n] = a[m×k] · b[k×n]` (+ `c` if `accumulate`), row-major, with
/// optional transposed views of `a` and `b`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths checked above; strides describe exactly those
    // buffers and `c` is a distinct mutable borrow.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct Grid {
    batch: usize,
    rows: usize,
    cols: usize,
    kernel: usize,
}

impl Grid {
    fn n(&self) -> usize {
        self.batch * self.rows * self.cols
    }

    /// Unfolds `[cin][n]` into `[cin·k·k][n]` with zero padding.
    fn im2col(&self, a: &[f64], cin: usize) -> Vec<f64> {
        let (h, w, k) = (self.rows, self.cols, self.kernel);
        let n = self.n();
        let pad = (k / 2) as isize;
        let mut col = vec![0.0; cin * k * k * n];
        for ci in 0..cin {
            let src = &a[ci * n..(ci + 1) * n];
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut col[row * n..(row + 1) * n];
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                    if x_lo >= x_hi {
                        continue;
                    }
                    for b in 0..self.batch {
                        for y in 0..h {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let d0 = (b * h + y) * w;
                            let s0 = (b * h + sy as usize) * w;
                            let sx_lo = (x_lo as isize + dx) as usize;
                            dst[d0 + x_lo..d0 + x_hi]
                                .copy_from_slice(&src[s0 + sx_lo..s0 + sx_lo + (x_hi - x_lo)]);
                        }
                    }
                }
            }
        }
        col
    }

    /// Adjoint of [`Grid::im2col`]: folds `[cin·k·k][n]` back onto `[cin][n]`.
    fn col2im(&self, col: &[f64], cin: usize) -> Vec<f64> {
        let (h, w, k) = (self.rows, self.cols, self.kernel);
        let n = self.n();
        let pad = (k / 2) as isize;
        let mut a = vec![0.0; cin * n];
        for ci in 0..cin {
            let dst = &mut a[ci * n..(ci + 1) * n];
            for ky in 0..k {
                let dy = ky as isize - pad;
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let row = (ci * k + ky) * k + kx;
                    let src = &col[row * n..(row + 1) * n];
                    let x_lo = (-dx).max(0) as usize;
                    let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                    if x_lo >= x_hi {
                        continue;
                    }
                    for b in 0..self.batch {
                        for y in 0..h {
                            let sy = y as isize + dy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            let s0 = (b * h + y) * w;
                            let d0 = (b * h + sy as usize) * w;
                            let dx_lo = (x_lo as isize + dx) as usize;
                            for (d, s) in dst[d0 + dx_lo..d0 + dx_lo + (x_hi - x_lo)]
                                .iter_mut()
                                .zip(&src[s0 + x_lo..s0 + x_hi])
                            {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
        a
    }
}

/// Intermediate values kept for the backward pass.
pub struct Tape {
    batch: usize,
    sigmas: Vec<f64>,
    pe: Vec<Vec<f64>>,
    a1: Vec<Vec<f64>>,
    modulation: Vec<Vec<f64>>,
    /// Input to each convolution, `[cin][n]`.
    conv_in: Vec<Vec<f64>>,
    /// Raw convolution outputs `[cout][n]`.
    conv_out: Vec<Vec<f64>>,
    /// Modulated encoder pre-activations.
    modulated: Vec<Vec<f64>>,
}

impl Tape {
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }
}

fn conv_forward(
    arch: &Arch,
    grid: &Grid,
    params: &[f64],
    span: Span,
    layer: usize,
    input: &[f64],
) -> Vec<f64> {
    let (cin, cout) = arch.conv_dims(layer);
    let kk = arch.kernel * arch.kernel;
    let n = grid.n();
    let col = grid.im2col(input, cin);
    let mut out = vec![0.0; cout * n];
    for (c, chunk) in out.chunks_mut(n).enumerate() {
        chunk.fill(params[span.b + c]);
    }
    gemm(
        cout,
        cin * kk,
        n,
        &params[span.w..span.w + cout * cin * kk],
        false,
        &col,
        false,
        &mut out,
        true,
    );
    out
}

/// Full forward pass. `x` is `[2][B·H·W]`, `sigmas` has one entry per
/// sample. Returns the output (same layout as `x`) and the tape.
pub fn forward(arch: &Arch, params: &[f64], x: &[f64], sigmas: &[f64]) -> Result<(Vec<f64>, Tape)> {
    arch.validate()?;
    let lay = arch.layout();
    ensure!(
        params.len() == lay.total,
        "expected {} parameters, got {}",
        lay.total,
        params.len()
    );
    let batch = sigmas.len();
    ensure!(batch > 0, "empty batch");
    let hw = arch.rows * arch.cols;
    ensure!(
        x.len() == 2 * batch * hw,
        "input has {} entries, expected {} for a batch of {batch} on a {}x{} grid",
        x.len(),
        2 * batch * hw,
        arch.rows,
        arch.cols
    );
    let grid = Grid {
        batch,
        rows: arch.rows,
        cols: arch.cols,
        kernel: arch.kernel,
    };
    let n = grid.n();
    let (e, h, m) = (arch.embed, arch.hidden, arch.modulation());

    let mut pe = Vec::with_capacity(batch);
    let mut a1s = Vec::with_capacity(batch);
    let mut mods = Vec::with_capacity(batch);
    for &s in sigmas {
        let enc = positional_encoding(s, e);
        let mut a1 = params[lay.lin1.b..lay.lin1.b + e].to_vec();
        gemm(
            e,
            e,
            1,
            &params[lay.lin1.w..lay.lin1.w + e * e],
            false,
            &enc,
            false,
            &mut a1,
            true,
        );
        let h1: Vec<f64> = a1.iter().map(|v| silu(*v)).collect();
        let mut md = params[lay.lin2.b..lay.lin2.b + m].to_vec();
        gemm(
            m,
            e,
            1,
            &params[lay.lin2.w..lay.lin2.w + m * e],
            false,
            &h1,
            false,
            &mut md,
            true,
        );
        pe.push(enc);
        a1s.push(a1);
        mods.push(md);
    }

    let mut conv_in = Vec::with_capacity(CONV_LAYERS);
    let mut conv_out = Vec::with_capacity(CONV_LAYERS);
    let mut modulated = Vec::with_capacity(ENCODER_LAYERS);
    let mut act = x.to_vec();
    for l in 0..CONV_LAYERS {
        let y = conv_forward(arch, &grid, params, lay.conv[l], l, &act);
        conv_in.push(act);
        act = if l < ENCODER_LAYERS {
            let mut u = y.clone();
            for c in 0..h {
                for (b, md) in mods.iter().enumerate() {
                    let scale = 1.0 + md[l * 2 * h + c];
                    let shift = md[l * 2 * h + h + c];
                    for v in &mut u[c * n + b * hw..c * n + (b + 1) * hw] {
                        *v = *v * scale + shift;
                    }
                }
            }
            let a: Vec<f64> = u.iter().map(|v| silu(*v)).collect();
            modulated.push(u);
            a
        } else if l < CONV_LAYERS - 1 {
            y.iter().map(|v| silu(*v)).collect()
        } else {
            y.clone()
        };
        conv_out.push(y);
    }
    for (o, xi) in act.iter_mut().zip(x) {
        *o += xi;
    }
    Ok((
        act,
        Tape {
            batch,
            sigmas: sigmas.to_vec(),
            pe,
            a1: a1s,
            modulation: mods,
            conv_in,
            conv_out,
            modulated,
        },
    ))
}

/// Parameter gradient of `Σ g_out · D`, given `g_out = ∂L/∂D`.
#[allow(clippy::needless_range_loop)] // per-sample loops index several tape arrays
pub fn backward(arch: &Arch, params: &[f64], tape: &Tape, g_out: &[f64]) -> Vec<f64> {
    let lay = arch.layout();
    let batch = tape.batch;
    let grid = Grid {
        batch,
        rows: arch.rows,
        cols: arch.cols,
        kernel: arch.kernel,
    };
    let n = grid.n();
    let hw = arch.rows * arch.cols;
    let (e, h, m) = (arch.embed, arch.hidden, arch.modulation());
    let kk = arch.kernel * arch.kernel;
    let mut grad = vec![0.0; lay.total];
    let mut g_mod = vec![vec![0.0; m]; batch];

    // gradient w.r.t. the current layer's output activation
    let mut g_act = g_out.to_vec();
    for l in (0..CONV_LAYERS).rev() {
        let (cin, cout) = arch.conv_dims(l);
        let y = &tape.conv_out[l];
        // gradient w.r.t. the raw convolution output
        let g_y: Vec<f64> = if l == CONV_LAYERS - 1 {
            g_act
        } else if l >= ENCODER_LAYERS {
            g_act
                .iter()
                .zip(y)
                .map(|(g, v)| g * silu_grad(*v))
                .collect()
        } else {
            let u = &tape.modulated[l];
            let mut g_y = vec![0.0; cout * n];
            for c in 0..h {
                for b in 0..batch {
                    let md = &tape.modulation[b];
                    let scale = 1.0 + md[l * 2 * h + c];
                    let range = c * n + b * hw..c * n + (b + 1) * hw;
                    let mut g_scale = 0.0;
                    let mut g_shift = 0.0;
                    for i in range {
                        let g_u = g_act[i] * silu_grad(u[i]);
                        g_scale += g_u * y[i];
                        g_shift += g_u;
                        g_y[i] = g_u * scale;
                    }
                    g_mod[b][l * 2 * h + c] += g_scale;
                    g_mod[b][l * 2 * h + h + c] += g_shift;
                }
            }
            g_y
        };

        let span = lay.conv[l];
        for c in 0..cout {
            grad[span.b + c] += g_y[c * n..(c + 1) * n].iter().sum::<f64>();
        }
        let col = grid.im2col(&tape.conv_in[l], cin);
        gemm(
            cout,
            n,
            cin * kk,
            &g_y,
            false,
            &col,
            true,
            &mut grad[span.w..span.w + cout * cin * kk],
            true,
        );
        if l == 0 {
            break;
        }
        drop(col);
        let mut g_col = vec![0.0; cin * kk * n];
        gemm(
            cin * kk,
            cout,
            n,
            &params[span.w..span.w + cout * cin * kk],
            true,
            &g_y,
            false,
            &mut g_col,
            false,
        );
        g_act = grid.col2im(&g_col, cin);
    }

    for b in 0..batch {
        let a1 = &tape.a1[b];
        let h1: Vec<f64> = a1.iter().map(|v| silu(*v)).collect();
        let gm = &g_mod[b];
        for (i, g) in gm.iter().enumerate() {
            grad[lay.lin2.b + i] += g;
        }
        gemm(
            m,
            1,
            e,
            gm,
            false,
            &h1,
            false,
            &mut grad[lay.lin2.w..lay.lin2.w + m * e],
            true,
        );
        let mut g_h1 = vec![0.0; e];
        gemm(
            e,
            m,
            1,
            &params[lay.lin2.w..lay.lin2.w + m * e],
            true,
            gm,
            false,
            &mut g_h1,
            false,
        );
        let g_a1: Vec<f64> = g_h1
            .iter()
            .zip(a1)
            .map(|(g, a)| g * silu_grad(*a))
            .collect();
        for (i, g) in g_a1.iter().enumerate() {
            grad[lay.lin1.b + i] += g;
        }
        gemm(
            e,
            1,
            e,
            &g_a1,
            false,
            &tape.pe[b],
            false,
            &mut grad[lay.lin1.w..lay.lin1.w + e * e],
            true,
        );
    }
    grad
}

/// Writes complex sample `b` of a batch into the `[2][B·H·W]` grid.
pub fn pack_sample(arch: &Arch, h: &CVector, batch: usize, b: usize, out: &mut [f64]) {
    let (rows, cols) = (arch.rows, arch.cols);
    let hw = rows * cols;
    let n = batch * hw;
    for c in 0..cols {
        for r in 0..rows {
            let z = h[c * rows + r];
            let p = b * hw + r * cols + c;
            out[p] = z.re;
            out[n + p] = z.im;
        }
    }
}

/// Inverse of [`pack_sample`].
pub fn unpack_sample(arch: &Arch, grid: &[f64], batch: usize, b: usize) -> CVector {
    let (rows, cols) = (arch.rows, arch.cols);
    let hw = rows * cols;
    let n = batch * hw;
    CVector::from_fn(rows * cols, |i, _| {
        let (c, r) = (i / rows, i % rows);
        let p = b * hw + r * cols + c;
        C64::new(grid[p], grid[n + p])
    })
}
