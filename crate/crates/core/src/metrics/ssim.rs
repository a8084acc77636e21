//! Multi-scale structural similarity.
//!
//! Gaussian window (11 taps, sigma 1.5), valid filtering, stability constants
//! `(0.01 L)^2` and `(0.03 L)^2` with `L = 1`, 2x average-pool downsampling and
//! the five standard scale weights. Negative contrast-structure terms are
//! clamped to zero so the score stays in `[0, 1]`.

use std::sync::atomic::{AtomicBool, Ordering};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Volume;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const K1: f64 = 0.01;
const K2: f64 = 0.03;

static REDUCED_WARNED: AtomicBool = AtomicBool::new(false);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsSsimMode {
    /// Mean of 2D MS-SSIM over the three central orthogonal slices.
    CentralSlices,
    /// Full 3D windows.
    Volumetric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsSsimConfig {
    pub mode: MsSsimMode,
    pub window: usize,
    pub sigma: f64,
    pub scales: usize,
}

impl Default for MsSsimConfig {
    fn default() -> Self {
        Self { mode: MsSsimMode::CentralSlices, window: 11, sigma: 1.5, scales: 5 }
    }
}

#[derive(Debug, Clone)]
struct Image {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Image {
    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.dims.len()];
        for a in (0..self.dims.len().saturating_sub(1)).rev() {
            s[a] = s[a + 1] * self.dims[a + 1];
        }
        s
    }

    /// Valid 1D correlation along one axis.
    fn filter_axis(&self, axis: usize, taps: &[f64]) -> Image {
        let mut dims = self.dims.clone();
        dims[axis] = self.dims[axis] + 1 - taps.len();
        let n: usize = dims.iter().product();
        let src_strides = self.strides();
        let out_img = Image { dims: dims.clone(), data: Vec::new() };
        let dst_strides = out_img.strides();
        let mut data = vec![0.0; n];
        for (i, out) in data.iter_mut().enumerate() {
            let mut base = 0;
            let mut rem = i;
            for a in 0..dims.len() {
                let c = rem / dst_strides[a];
                rem %= dst_strides[a];
                base += c * src_strides[a];
            }
            let st = src_strides[axis];
            *out = taps.iter().enumerate().map(|(t, w)| w * self.data[base + t * st]).sum();
        }
        Image { dims, data }
    }

    fn blur(&self, taps: &[f64]) -> Image {
        (0..self.dims.len()).fold(self.clone(), |img, a| img.filter_axis(a, taps))
    }

    /// Average pooling over 2^n blocks (floor).
    fn downsample(&self) -> Image {
        let dims: Vec<usize> = self.dims.iter().map(|d| d / 2).collect();
        let n: usize = dims.iter().product();
        let nd = dims.len();
        let src = self.strides();
        let dst = Image { dims: dims.clone(), data: Vec::new() }.strides();
        let corners = 1usize << nd;
        let mut data = vec![0.0; n];
        for (i, out) in data.iter_mut().enumerate() {
            let mut coord = vec![0; nd];
            let mut rem = i;
            for a in 0..nd {
                coord[a] = rem / dst[a];
                rem %= dst[a];
            }
            let mut acc = 0.0;
            for corner in 0..corners {
                let idx: usize = (0..nd).map(|a| (2 * coord[a] + ((corner >> a) & 1)) * src[a]).sum();
                acc += self.data[idx];
            }
            *out = acc / corners as f64;
        }
        Image { dims, data }
    }

    fn mul(&self, other: &Image) -> Image {
        Image { dims: self.dims.clone(), data: self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect() }
    }
}

fn gaussian(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..window).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_terms(x: &Image, y: &Image, taps: &[f64]) -> (f64, f64) {
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mx = x.blur(taps);
    let my = y.blur(taps);
    let sxx = x.mul(x).blur(taps);
    let syy = y.mul(y).blur(taps);
    let sxy = x.mul(y).blur(taps);
    let n = mx.data.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mx.data.len() {
        let (ux, uy) = (mx.data[i], my.data[i]);
        let vx = sxx.data[i] - ux * ux;
        let vy = syy.data[i] - uy * uy;
        let cov = sxy.data[i] - ux * uy;
        let csi = (2.0 * cov + c2) / (vx + vy + c2);
        let li = (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
        cs += csi;
        ssim += li * csi;
    }
    (ssim / n, cs / n)
}

fn ms_ssim_image(x: Image, y: Image, cfg: &MsSsimConfig) -> Result<f64> {
    let min_side = *x.dims.iter().min().unwrap_or(&0);
    if min_side < 3 {
        return Err(Error::dim(format!("image {:?} too small for SSIM", x.dims)));
    }
    let mut window = cfg.window.min(if min_side % 2 == 1 { min_side } else { min_side - 1 });
    window = window.max(3);
    let mut scales = 1;
    while scales < cfg.scales.min(MS_SSIM_WEIGHTS.len()) && (min_side >> scales) >= window {
        scales += 1;
    }
    if (scales < cfg.scales || window < cfg.window) && !REDUCED_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("MS-SSIM reduced to {scales} scale(s) with window {window} for image {:?}", x.dims);
    }
    let taps = gaussian(window, cfg.sigma);
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let (mut x, mut y) = (x, y);
    let mut score = 1.0;
    for s in 0..scales {
        let (ssim, cs) = ssim_terms(&x, &y, &taps);
        let w = MS_SSIM_WEIGHTS[s] / wsum;
        if s + 1 == scales {
            score *= ssim.max(0.0).powf(w);
        } else {
            score *= cs.max(0.0).powf(w);
            x = x.downsample();
            y = y.downsample();
        }
    }
    Ok(score.clamp(0.0, 1.0))
}

pub fn ms_ssim<T: Scalar>(a: &Volume<T>, b: &Volume<T>) -> Result<f64> {
    ms_ssim_with(a, b, &MsSsimConfig::default())
}

pub fn ms_ssim_with<T: Scalar>(a: &Volume<T>, b: &Volume<T>, cfg: &MsSsimConfig) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::dim(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let to_f64 = |v: &[T]| v.iter().map(|x| x.as_f64()).collect::<Vec<_>>();
    match cfg.mode {
        MsSsimMode::Volumetric => ms_ssim_image(
            Image { dims: a.dims().to_vec(), data: to_f64(a.data()) },
            Image { dims: b.dims().to_vec(), data: to_f64(b.data()) },
            cfg,
        ),
        MsSsimMode::CentralSlices => {
            let mut total = 0.0;
            for axis in 0..3 {
                let idx = a.dims()[axis] / 2;
                let (r, c, sa) = a.slice(axis, idx);
                let (_, _, sb) = b.slice(axis, idx);
                total += ms_ssim_image(
                    Image { dims: vec![r, c], data: to_f64(&sa) },
                    Image { dims: vec![r, c], data: to_f64(&sb) },
                    cfg,
                )?;
            }
            Ok(total / 3.0)
        }
    }
}
