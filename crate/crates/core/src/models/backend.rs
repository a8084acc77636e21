use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mixer::mix_labels;
use crate::nn::ConvNet;
use crate::scalar::Scalar;
use crate::seeds::rng_from;
use crate::tensor::{LabelField, Tensor, Volume};

/// Stable content hash of an intensity patch (dims plus little-endian payload).
pub fn fingerprint<T: Scalar>(x: &Volume<T>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(Tensor::from(x).encode());
    h.finalize().into()
}

fn hex(fp: &[u8; 32]) -> String {
    fp.iter().map(|b| format!("{b:02x}")).collect()
}

/// Ground truth a test harness hands to an oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleAccess<T: Scalar = f32> {
    pub y_target: LabelField<T>,
    pub y_ref: LabelField<T>,
    pub alpha: f64,
}

/// The ideal server: exactly `alpha y_target + (1 - alpha) y_ref`.
pub fn oracle_segment<T: Scalar>(x_mix: &Volume<T>, access: Option<&OracleAccess<T>>) -> Result<LabelField<T>> {
    let access = access.ok_or_else(|| Error::Access("oracle called without ground truth".into()))?;
    if access.y_target.dims() != x_mix.dims() {
        return Err(Error::dim("ground truth does not match the mixture"));
    }
    mix_labels(&access.y_target, &access.y_ref, access.alpha)
}

/// Oracle output with i.i.d. Gaussian noise on its log-probabilities, re-softmaxed.
pub fn noisy_oracle_segment<T: Scalar, R: Rng + ?Sized>(
    x_mix: &Volume<T>,
    access: Option<&OracleAccess<T>>,
    noise_std: f64,
    rng: &mut R,
) -> Result<LabelField<T>> {
    let clean = oracle_segment(x_mix, access)?;
    if noise_std == 0.0 {
        return Ok(clean);
    }
    let normal = Normal::new(0.0, noise_std).map_err(|e| Error::config(e.to_string()))?;
    perturb_logits(&clean, &normal, rng)
}

/// Mixture-fingerprint -> ground-truth table used by oracle backends.
///
/// Test-harness only. Entries live in memory and can additionally be looked
/// up lazily from a directory of `<fingerprint>.mxsg` ideal mixed label maps.
#[derive(Debug, Default)]
pub struct OracleLedger<T: Scalar = f32> {
    entries: RwLock<HashMap<[u8; 32], LabelField<T>>>,
    dir: Option<PathBuf>,
}

impl<T: Scalar> OracleLedger<T> {
    pub fn new() -> Self {
        Self { entries: RwLock::new(HashMap::new()), dir: None }
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        Self { entries: RwLock::new(HashMap::new()), dir: Some(dir.into()) }
    }

    /// Records the ideal response for a mixture.
    pub fn register(&self, x_mix: &Volume<T>, access: &OracleAccess<T>) -> Result<()> {
        let ideal = oracle_segment(x_mix, Some(access))?;
        self.entries.write().unwrap().insert(fingerprint(x_mix), ideal);
        Ok(())
    }

    /// Writes an entry file into `dir` for a separate oracle server process.
    pub fn export(dir: &Path, x_mix: &Volume<T>, access: &OracleAccess<T>) -> Result<()> {
        let ideal = oracle_segment(x_mix, Some(access))?;
        Tensor::from(&ideal).write(dir.join(format!("{}.mxsg", hex(&fingerprint(x_mix)))))
    }

    pub fn lookup(&self, x_mix: &Volume<T>) -> Result<LabelField<T>> {
        let fp = fingerprint(x_mix);
        if let Some(hit) = self.entries.read().unwrap().get(&fp) {
            return Ok(hit.clone());
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{}.mxsg", hex(&fp)));
            if path.exists() {
                let field = Tensor::<T>::decode(&fs::read(path)?)?.into_labels()?;
                self.entries.write().unwrap().insert(fp, field.clone());
                return Ok(field);
            }
        }
        Err(Error::Access("mixture not registered with the oracle".into()))
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tiny fully convolutional segmenter: three 3x3x3 convolutions, softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyCnn<T: Scalar = f32> {
    pub net: ConvNet<T>,
}

pub const SEG_HIDDEN: usize = 16;

impl<T: Scalar> TinyCnn<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, classes: usize) -> Self {
        Self { net: ConvNet::new(rng, &[1, SEG_HIDDEN, SEG_HIDDEN, classes], 3) }
    }

    /// Wraps a loaded network; it must map one channel to at least two classes.
    pub fn from_net(net: ConvNet<T>) -> Result<Self> {
        if net.in_channels() != 1 || net.out_channels() < 2 {
            return Err(Error::dim("segmenter must map 1 channel to at least 2 classes"));
        }
        Ok(Self { net })
    }

    pub fn classes(&self) -> usize {
        self.net.out_channels()
    }

    pub fn segment(&self, x: &Volume<T>) -> Result<LabelField<T>> {
        if self.net.in_channels() != 1 {
            return Err(Error::dim("segmenter must take one input channel"));
        }
        let probs = self.net.forward(x.data(), x.dims())?;
        LabelField::new(self.classes(), x.dims(), probs)
    }
}

/// Server-side predictor `x_mix -> y_mix_hat`.
#[derive(Debug, Clone)]
pub enum SegmentationBackend<T: Scalar = f32> {
    Oracle { ledger: Arc<OracleLedger<T>> },
    NoisyOracle { ledger: Arc<OracleLedger<T>>, noise_std: f64, seed: u64 },
    TinyCnn(TinyCnn<T>),
}

impl<T: Scalar> SegmentationBackend<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Oracle { .. } => "oracle",
            Self::NoisyOracle { .. } => "noisy",
            Self::TinyCnn(_) => "cnn",
        }
    }

    /// Runs the backend. Noisy-oracle noise is seeded by `(seed, fingerprint)`
    /// so results do not depend on request order.
    pub fn segment(&self, x_mix: &Volume<T>) -> Result<LabelField<T>> {
        self.segment_with(x_mix, None)
    }

    /// Like `segment`, but oracle variants read ground truth from `access`
    /// instead of the ledger when it is given. Learned backends ignore it.
    pub fn segment_with(&self, x_mix: &Volume<T>, access: Option<&OracleAccess<T>>) -> Result<LabelField<T>> {
        let truth = |ledger: &OracleLedger<T>| match access {
            Some(a) => oracle_segment(x_mix, Some(a)),
            None => ledger.lookup(x_mix),
        };
        let out = match self {
            Self::Oracle { ledger } => truth(ledger)?,
            Self::NoisyOracle { ledger, noise_std, seed } => {
                let clean = truth(ledger)?;
                let fp = fingerprint(x_mix);
                let mut rng = rng_from(seed ^ u64::from_le_bytes(fp[..8].try_into().unwrap()));
                let normal = Normal::new(0.0, *noise_std).map_err(|e| Error::config(e.to_string()))?;
                perturb_logits(&clean, &normal, &mut rng)?
            }
            Self::TinyCnn(cnn) => cnn.segment(x_mix)?,
        };
        debug_assert!(out.check_simplex(1e-5).is_ok());
        Ok(out)
    }
}

fn perturb_logits<T: Scalar, R: Rng + ?Sized>(clean: &LabelField<T>, normal: &Normal<f64>, rng: &mut R) -> Result<LabelField<T>> {
    if normal.std_dev() == 0.0 {
        return Ok(clean.clone());
    }
    let (c, n) = (clean.classes(), clean.voxels());
    let mut out = vec![0.0f64; c * n];
    for v in 0..n {
        let mut max = f64::NEG_INFINITY;
        for k in 0..c {
            let z = clean.prob(k, v).as_f64().max(1e-8).ln() + normal.sample(rng);
            out[k * n + v] = z;
            max = max.max(z);
        }
        let mut sum = 0.0;
        for k in 0..c {
            out[k * n + v] = (out[k * n + v] - max).exp();
            sum += out[k * n + v];
        }
        for k in 0..c {
            out[k * n + v] /= sum;
        }
    }
    LabelField::new(c, clean.dims(), out.into_iter().map(T::of).collect())
}
