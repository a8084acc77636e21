//! Synthetic labeled "brain-like" volumes: nested superellipsoid shells with
//! low-order spherical-harmonic boundary perturbations and a smooth
//! subject-specific texture. Anatomy persists across scans of a subject;
//! each scan adds a small warp and acquisition noise.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seeds::rng_from;
use crate::tensor::{voxel_count, Dims3, LabelField, Volume};

/// Background plus three tissue shells.
pub const PHANTOM_CLASSES: usize = 4;
const SH_LMAX: usize = 4;
const TEXTURE_WAVES: usize = 6;

/// One closed surface: superellipsoid with a harmonic radial perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct Shell {
    /// Semi-axes as fractions of the half extent of each axis.
    pub radii: [f64; 3],
    /// Superellipsoid exponent (2 is an ellipsoid).
    pub exponent: f64,
    /// Real spherical-harmonic coefficients for degrees 1..=4, `(l, m)` in order.
    pub harmonics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureWave {
    pub frequency: [f64; 3],
    pub phase: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectSpec {
    pub subject_id: String,
    pub classes: usize,
    /// Center in normalized coordinates (`0.5` is the volume center).
    pub center: [f64; 3],
    /// Outermost first; class `k` is inside shells `0..k` and outside shell `k`.
    pub shells: Vec<Shell>,
    pub texture: Vec<TextureWave>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    pub dims: Dims3,
    pub class_means: Vec<f64>,
    pub class_std: Vec<f64>,
    pub noise_std: f64,
    /// Relative magnitude of the per-scan anatomy warp.
    pub perturbation: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            dims: [48; 3],
            class_means: vec![0.05, 0.30, 0.55, 0.85],
            class_std: vec![0.02, 0.06, 0.06, 0.05],
            noise_std: 0.03,
            perturbation: 0.02,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.class_means.len() != PHANTOM_CLASSES || self.class_std.len() != PHANTOM_CLASSES {
            return Err(Error::config(format!("scan config needs {PHANTOM_CLASSES} class means and stds")));
        }
        if self.class_means.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::config("class means must lie in [0, 1]"));
        }
        if self.class_std.iter().any(|s| !(*s >= 0.0)) || !(self.noise_std >= 0.0) || !(self.perturbation >= 0.0) {
            return Err(Error::config("noise, texture std and perturbation must be non-negative"));
        }
        if self.dims.iter().any(|&d| d < 4) {
            return Err(Error::config("phantom dims must be at least 4"));
        }
        Ok(())
    }
}

/// Real spherical harmonics for `l = 1..=lmax` at a unit direction.
fn real_sh(lmax: usize, dir: [f64; 3], out: &mut Vec<f64>) {
    out.clear();
    let [x, y, z] = dir;
    let rho = (x * x + y * y).sqrt();
    let (cphi, sphi) = if rho > 1e-12 { (x / rho, y / rho) } else { (1.0, 0.0) };
    // cos(m phi), sin(m phi) by the angle-addition recurrence
    let mut cm = vec![1.0; lmax + 1];
    let mut sm = vec![0.0; lmax + 1];
    for m in 1..=lmax {
        cm[m] = cm[m - 1] * cphi - sm[m - 1] * sphi;
        sm[m] = sm[m - 1] * cphi + cm[m - 1] * sphi;
    }
    // associated Legendre P_l^m(z), no Condon-Shortley phase
    let mut p = vec![vec![0.0; lmax + 1]; lmax + 1];
    p[0][0] = 1.0;
    for m in 1..=lmax {
        p[m][m] = p[m - 1][m - 1] * (2 * m - 1) as f64 * rho;
    }
    for m in 0..lmax {
        p[m + 1][m] = (2 * m + 1) as f64 * z * p[m][m];
    }
    for m in 0..=lmax {
        for l in (m + 2)..=lmax {
            p[l][m] = ((2 * l - 1) as f64 * z * p[l - 1][m] - (l + m - 1) as f64 * p[l - 2][m]) / (l - m) as f64;
        }
    }
    let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
    for l in 1..=lmax {
        for mi in -(l as i64)..=(l as i64) {
            let m = mi.unsigned_abs() as usize;
            let mut norm = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * fact(l - m) / fact(l + m)).sqrt();
            if m != 0 {
                norm *= std::f64::consts::SQRT_2;
            }
            let ang = match mi.signum() {
                0 => 1.0,
                1 => cm[m],
                _ => sm[m],
            };
            out.push(norm * p[l][m] * ang);
        }
    }
}

fn sh_count(lmax: usize) -> usize {
    (lmax + 1) * (lmax + 1) - 1
}

/// Deterministic subject anatomy.
pub fn generate_subject(seed: u64) -> SubjectSpec {
    let mut rng = rng_from(seed);
    let center = [0; 3].map(|_| 0.5 + rng.random_range(-0.03..0.03));
    let outer = [0; 3].map(|_| rng.random_range(0.70..0.86));
    // each inner shell shrinks the one outside it
    let shrink = [1.0, rng.random_range(0.76..0.86), rng.random_range(0.60..0.72)];
    let mut shells = Vec::with_capacity(3);
    let mut radii = outer;
    for (k, s) in shrink.iter().enumerate() {
        radii = radii.map(|r| r * s * rng.random_range(0.97..1.03));
        let mut harmonics = Vec::with_capacity(sh_count(SH_LMAX));
        for l in 1..=SH_LMAX {
            let sd = if k == 0 { 0.05 } else { 0.09 } / l as f64;
            let normal = Normal::new(0.0, sd).unwrap();
            for _ in 0..(2 * l + 1) {
                harmonics.push(normal.sample(&mut rng));
            }
        }
        shells.push(Shell { radii, exponent: rng.random_range(2.0..3.0), harmonics });
    }
    let amp = (2.0 / TEXTURE_WAVES as f64).sqrt();
    let texture = (0..TEXTURE_WAVES)
        .map(|_| TextureWave {
            frequency: [0; 3].map(|_| rng.random_range(-5.0..5.0)),
            phase: rng.random_range(0.0..std::f64::consts::TAU),
            amplitude: amp,
        })
        .collect();
    SubjectSpec { subject_id: format!("sub-{seed:04}"), classes: PHANTOM_CLASSES, center, shells, texture }
}

impl SubjectSpec {
    /// Copy with radii and center jittered by up to `magnitude` (relative).
    pub fn warped<R: Rng + ?Sized>(&self, rng: &mut R, magnitude: f64) -> SubjectSpec {
        let mut out = self.clone();
        let jitter = |rng: &mut R| magnitude * rng.random_range(-1.0..=1.0);
        for a in 0..3 {
            out.center[a] += 0.5 * out.shells[0].radii[a] * jitter(rng) * 0.5;
        }
        for shell in &mut out.shells {
            for r in &mut shell.radii {
                *r *= 1.0 + jitter(rng);
            }
        }
        out
    }

    /// Hard class index per voxel.
    pub fn rasterize(&self, dims: Dims3) -> Vec<u8> {
        let mut labels = Vec::with_capacity(voxel_count(dims));
        let mut sh = Vec::with_capacity(sh_count(SH_LMAX));
        for h in 0..dims[0] {
            for w in 0..dims[1] {
                for d in 0..dims[2] {
                    let pos = [h, w, d];
                    // coordinates in half-extent units relative to the center
                    let rel: [f64; 3] =
                        [0, 1, 2].map(|a| ((pos[a] as f64 + 0.5) / dims[a] as f64 - self.center[a]) * 2.0);
                    let len = (rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]).sqrt();
                    let dir = if len > 1e-12 { rel.map(|c| c / len) } else { [0.0, 0.0, 1.0] };
                    real_sh(SH_LMAX, dir, &mut sh);
                    let mut class = 0u8;
                    for shell in &self.shells {
                        let e = shell.exponent;
                        let r = (0..3).map(|a| (rel[a] / shell.radii[a]).abs().powf(e)).sum::<f64>().powf(1.0 / e);
                        let bump: f64 = shell.harmonics.iter().zip(&sh).map(|(c, y)| c * y).sum();
                        if r <= 1.0 + bump {
                            class += 1;
                        } else {
                            break;
                        }
                    }
                    labels.push(class);
                }
            }
        }
        labels
    }

    /// Smooth zero-mean texture of roughly unit variance.
    fn texture_at(&self, p: [f64; 3]) -> f64 {
        self.texture
            .iter()
            .map(|t| {
                let arg = std::f64::consts::TAU * (t.frequency[0] * p[0] + t.frequency[1] * p[1] + t.frequency[2] * p[2]);
                t.amplitude * (arg + t.phase).cos()
            })
            .sum()
    }
}

/// Fraction of voxels per class.
pub fn class_fractions(labels: &[u8], classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; classes];
    for &l in labels {
        counts[l as usize] += 1;
    }
    counts.iter().map(|&c| c as f64 / labels.len() as f64).collect()
}

/// One acquisition of a subject: `(intensities, one-hot labels)`.
pub fn render_scan<T: Scalar>(spec: &SubjectSpec, cfg: &ScanConfig, scan_seed: u64) -> Result<(Volume<T>, LabelField<T>)> {
    cfg.validate()?;
    let mut rng = rng_from(scan_seed);
    let anatomy = spec.warped(&mut rng, cfg.perturbation);
    let labels = anatomy.rasterize(cfg.dims);
    let dims = cfg.dims;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::config(e.to_string()))?;
    let mut data = Vec::with_capacity(labels.len());
    let mut i = 0;
    for h in 0..dims[0] {
        for w in 0..dims[1] {
            for d in 0..dims[2] {
                let c = labels[i] as usize;
                let p = [h as f64 / dims[0] as f64, w as f64 / dims[1] as f64, d as f64 / dims[2] as f64];
                let tex = if cfg.class_std[c] > 0.0 { cfg.class_std[c] * spec.texture_at(p) } else { 0.0 };
                let n = if cfg.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                data.push(T::of((cfg.class_means[c] + tex + n).clamp(0.0, 1.0)));
                i += 1;
            }
        }
    }
    let scan_id = format!("{}-scan{scan_seed}", spec.subject_id);
    let vol = Volume::new(dims, data)?.with_ids(spec.subject_id.clone(), scan_id);
    Ok((vol, LabelField::one_hot(spec.classes, dims, &labels)?))
}
