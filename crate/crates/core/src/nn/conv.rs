//! 3D convolution with edge-replicating ("same") padding.
//!
//! Activations are channel-major `(C, H, W, D)`. Internally the input is
//! copied into a replicate-padded buffer and the kernel taps are applied as
//! long contiguous axpy/dot sweeps over the flattened padded grid; positions
//! that fall on the padding ring are computed and then discarded.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::scalar::Scalar;
use crate::tensor::{voxel_count, Dims3};

#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d<T: Scalar> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Odd cubic kernel size (1 or 3).
    pub kernel: usize,
    /// `[out][in][kh][kw][kd]`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Precomputed geometry of the padded grid for one spatial shape.
#[derive(Debug, Clone)]
pub(crate) struct PadGeom {
    dims: Dims3,
    pad: usize,
    pdims: Dims3,
    /// Flat offsets of each kernel tap relative to the center.
    offsets: Vec<isize>,
    /// Flat padded index of the first / one past the last interior voxel.
    start: usize,
    end: usize,
}

impl PadGeom {
    pub(crate) fn new(dims: Dims3, kernel: usize) -> Self {
        let pad = kernel / 2;
        let pdims = [dims[0] + 2 * pad, dims[1] + 2 * pad, dims[2] + 2 * pad];
        let (s0, s1) = ((pdims[1] * pdims[2]) as isize, pdims[2] as isize);
        let r = pad as isize;
        let mut offsets = Vec::with_capacity(kernel * kernel * kernel);
        for a in -r..=r {
            for b in -r..=r {
                for c in -r..=r {
                    offsets.push(a * s0 + b * s1 + c);
                }
            }
        }
        let idx = |h: usize, w: usize, d: usize| (h * pdims[1] + w) * pdims[2] + d;
        let start = idx(pad, pad, pad);
        let end = idx(pad + dims[0] - 1, pad + dims[1] - 1, pad + dims[2] - 1) + 1;
        Self { dims, pad, pdims, offsets, start, end }
    }

    pub(crate) fn padded_len(&self) -> usize {
        voxel_count(self.pdims)
    }

    /// Replicate-pads every channel of `x` into `out`.
    pub(crate) fn pad<T: Scalar>(&self, x: &[T], channels: usize, out: &mut Vec<T>) {
        let n = voxel_count(self.dims);
        let pn = self.padded_len();
        out.clear();
        out.resize(channels * pn, T::zero());
        let [h, w, d] = self.dims;
        let p = self.pad;
        for c in 0..channels {
            let src = &x[c * n..(c + 1) * n];
            let dst = &mut out[c * pn..(c + 1) * pn];
            for ph in 0..self.pdims[0] {
                let sh = ph.saturating_sub(p).min(h - 1);
                for pw in 0..self.pdims[1] {
                    let sw = pw.saturating_sub(p).min(w - 1);
                    let row = &src[(sh * w + sw) * d..(sh * w + sw + 1) * d];
                    let base = (ph * self.pdims[1] + pw) * self.pdims[2];
                    dst[base..base + p].fill(row[0]);
                    dst[base + p..base + p + d].copy_from_slice(row);
                    dst[base + p + d..base + 2 * p + d].fill(row[d - 1]);
                }
            }
        }
    }

    /// Gathers the interior of a padded single-channel buffer.
    pub(crate) fn interior<T: Scalar>(&self, padded: &[T], out: &mut [T]) {
        let [h, w, d] = self.dims;
        let p = self.pad;
        for i in 0..h {
            for j in 0..w {
                let base = ((i + p) * self.pdims[1] + j + p) * self.pdims[2] + p;
                out[(i * w + j) * d..(i * w + j + 1) * d].copy_from_slice(&padded[base..base + d]);
            }
        }
    }

    /// Scatters an interior single-channel buffer into a zeroed padded one.
    pub(crate) fn embed<T: Scalar>(&self, x: &[T], out: &mut [T]) {
        out.fill(T::zero());
        let [h, w, d] = self.dims;
        let p = self.pad;
        for i in 0..h {
            for j in 0..w {
                let base = ((i + p) * self.pdims[1] + j + p) * self.pdims[2] + p;
                out[base..base + d].copy_from_slice(&x[(i * w + j) * d..(i * w + j + 1) * d]);
            }
        }
    }

    /// Adjoint of [`PadGeom::pad`] for one channel: folds padded gradients onto source voxels.
    pub(crate) fn fold<T: Scalar>(&self, padded: &[T], out: &mut [T]) {
        let [h, w, d] = self.dims;
        let p = self.pad;
        for ph in 0..self.pdims[0] {
            let sh = ph.saturating_sub(p).min(h - 1);
            for pw in 0..self.pdims[1] {
                let sw = pw.saturating_sub(p).min(w - 1);
                let base = (ph * self.pdims[1] + pw) * self.pdims[2];
                let row = &mut out[(sh * w + sw) * d..(sh * w + sw + 1) * d];
                for k in 0..p {
                    row[0] += padded[base + k];
                    row[d - 1] += padded[base + p + d + k];
                }
                for (o, g) in row.iter_mut().zip(&padded[base + p..base + p + d]) {
                    *o += *g;
                }
            }
        }
    }
}

#[inline]
fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * *xi;
    }
}

#[inline]
fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    // eight partial sums so the reduction vectorizes
    let mut acc = [T::zero(); 8];
    let chunks = x.len() / 8;
    for c in 0..chunks {
        for l in 0..8 {
            acc[l] += x[c * 8 + l] * y[c * 8 + l];
        }
    }
    let mut s = acc.iter().fold(T::zero(), |a, b| a + *b);
    for i in chunks * 8..x.len() {
        s += x[i] * y[i];
    }
    s
}

#[inline]
fn shifted(base: usize, off: isize) -> usize {
    (base as isize + off) as usize
}

impl<T: Scalar> Conv3d<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        let taps = kernel * kernel * kernel;
        let std = (2.0 / (in_channels * taps) as f64).sqrt();
        let normal = Normal::new(0.0, std).unwrap();
        let weight = (0..out_channels * in_channels * taps).map(|_| T::of(normal.sample(rng))).collect();
        Self { in_channels, out_channels, kernel, weight, bias: vec![T::zero(); out_channels] }
    }

    pub fn taps(&self) -> usize {
        self.kernel * self.kernel * self.kernel
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Returns the output and the padded input (kept for the backward pass).
    pub(crate) fn forward(&self, geom: &PadGeom, x: &[T]) -> (Vec<T>, Vec<T>) {
        let n = voxel_count(geom.dims);
        let pn = geom.padded_len();
        let mut padded = Vec::new();
        geom.pad(x, self.in_channels, &mut padded);
        let taps = self.taps();
        let (s, e) = (geom.start, geom.end);
        let mut acc = vec![T::zero(); pn];
        let mut out = vec![T::zero(); self.out_channels * n];
        for o in 0..self.out_channels {
            acc[s..e].fill(self.bias[o]);
            for i in 0..self.in_channels {
                let src = &padded[i * pn..(i + 1) * pn];
                let w = &self.weight[(o * self.in_channels + i) * taps..(o * self.in_channels + i + 1) * taps];
                for (k, &off) in geom.offsets.iter().enumerate() {
                    axpy(w[k], &src[shifted(s, off)..shifted(e, off)], &mut acc[s..e]);
                }
            }
            geom.interior(&acc, &mut out[o * n..(o + 1) * n]);
        }
        (out, padded)
    }

    /// Accumulates parameter gradients and returns the gradient w.r.t. the input.
    pub(crate) fn backward(
        &self,
        geom: &PadGeom,
        padded_input: &[T],
        grad_out: &[T],
        grad_w: &mut [T],
        grad_b: &mut [T],
        need_input_grad: bool,
    ) -> Option<Vec<T>> {
        let n = voxel_count(geom.dims);
        let pn = geom.padded_len();
        let taps = self.taps();
        let (s, e) = (geom.start, geom.end);
        let mut g = vec![T::zero(); pn];
        let mut grad_pad = if need_input_grad { vec![T::zero(); self.in_channels * pn] } else { Vec::new() };
        for o in 0..self.out_channels {
            let go = &grad_out[o * n..(o + 1) * n];
            grad_b[o] += go.iter().copied().sum::<T>();
            geom.embed(go, &mut g);
            for i in 0..self.in_channels {
                let src = &padded_input[i * pn..(i + 1) * pn];
                let base = (o * self.in_channels + i) * taps;
                for (k, &off) in geom.offsets.iter().enumerate() {
                    grad_w[base + k] += dot(&g[s..e], &src[shifted(s, off)..shifted(e, off)]);
                }
                if need_input_grad {
                    let w = &self.weight[base..base + taps];
                    let gp = &mut grad_pad[i * pn..(i + 1) * pn];
                    for (k, &off) in geom.offsets.iter().enumerate() {
                        axpy(w[k], &g[s..e], &mut gp[shifted(s, off)..shifted(e, off)]);
                    }
                }
            }
        }
        need_input_grad.then(|| {
            let mut grad_in = vec![T::zero(); self.in_channels * n];
            for i in 0..self.in_channels {
                geom.fold(&grad_pad[i * pn..(i + 1) * pn], &mut grad_in[i * n..(i + 1) * n]);
            }
            grad_in
        })
    }
}
