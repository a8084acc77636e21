//! Training loops: segmenter on mixtures, unmixing decoder, and both jointly.
//!
//! Joint objective per sample:
//! `w_ce CE(y_mix_hat, y_mix) + w_dice Dice(y_mix_hat, y_mix)
//!  + w_ce CE(y_target_hat, y_target) + w_dice Dice(y_target_hat, y_target)`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::backend::TinyCnn;
use super::unmix::UnmixNet;
use crate::error::{Error, Result};
use crate::mixer::{mix_image, mix_labels, sample_alpha, AlphaBounds, ReferencePool};
use crate::nn::loss::{cross_entropy, cross_entropy_logit_grad, soft_dice};
use crate::nn::{softmax_backward, ConvNet, Grads, Sgd};
use crate::scalar::Scalar;
use crate::seeds::rng_from;
use crate::tensor::{Dims3, LabelField, Volume};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub w_ce: f64,
    pub w_dice: f64,
    pub seed: u64,
    pub alpha: AlphaBounds,
    pub patch: Dims3,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            momentum: 0.9,
            batch_size: 4,
            iterations: 1000,
            w_ce: 1.0,
            w_dice: 1.0,
            seed: 0,
            alpha: AlphaBounds::default(),
            patch: [12; 3],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::config("learning rate must be >= 0; batch size and iterations > 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        AlphaBounds::new(self.alpha.min, self.alpha.max)?;
        Ok(())
    }
}

/// One training tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T: Scalar> {
    pub x_target: Volume<T>,
    pub y_target: LabelField<T>,
    pub x_ref: Volume<T>,
    pub y_ref: LabelField<T>,
    pub alpha: f64,
}

impl<T: Scalar> Sample<T> {
    pub fn x_mix(&self) -> Result<Volume<T>> {
        mix_image(&self.x_target, &self.x_ref, self.alpha)
    }

    pub fn y_mix(&self) -> Result<LabelField<T>> {
        mix_labels(&self.y_target, &self.y_ref, self.alpha)
    }
}

/// Source of `(x_target, y_target, x_ref, y_ref, alpha)` tuples.
#[derive(Debug, Clone)]
pub enum TrainingSet<T: Scalar> {
    /// Random target patches from labeled scans mixed with random references.
    Random { targets: ReferencePool<T>, references: ReferencePool<T>, patch: Dims3 },
    /// A fixed list cycled in order.
    Fixed(Vec<Sample<T>>),
}

impl<T: Scalar> TrainingSet<T> {
    pub fn random(targets: ReferencePool<T>, references: ReferencePool<T>, patch: Dims3) -> Self {
        Self::Random { targets, references, patch }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, bounds: AlphaBounds, step: usize) -> Result<Sample<T>> {
        match self {
            Self::Fixed(samples) => Ok(samples[step % samples.len()].clone()),
            Self::Random { targets, references, patch } => {
                let t = targets.reference_at(*patch, rng.random_range(0..targets.positions(*patch)))?;
                let r = references.reference_at(*patch, rng.random_range(0..references.positions(*patch)))?;
                let alpha = sample_alpha(rng, bounds)?;
                Ok(Sample { x_target: t.image, y_target: t.labels, x_ref: r.image, y_ref: r.labels, alpha })
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub losses: Vec<f64>,
}

/// Which parts of the joint model receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Segmenter,
    Joint,
}

/// Loss and gradient accumulation for one sample.
struct Step<'a, T: Scalar> {
    seg: &'a ConvNet<T>,
    unmix: Option<&'a ConvNet<T>>,
    cfg: &'a TrainConfig,
}

/// CE + Dice value and the gradient w.r.t. the logits of a softmax head,
/// plus an optional extra gradient w.r.t. its probabilities.
fn head_loss<T: Scalar>(probs: &[T], target: &[T], classes: usize, n: usize, cfg: &TrainConfig, extra: Option<&[T]>) -> (f64, Vec<T>) {
    let ce = cross_entropy(probs, target, classes, n);
    let (dl, mut gp) = soft_dice(probs, target, classes, n, cfg.w_dice);
    if let Some(e) = extra {
        for (g, x) in gp.iter_mut().zip(e) {
            *g += *x;
        }
    }
    let mut gz = softmax_backward(probs, &gp, classes, n);
    for (g, c) in gz.iter_mut().zip(cross_entropy_logit_grad(probs, target, n, cfg.w_ce)) {
        *g += c;
    }
    (cfg.w_ce * ce + dl, gz)
}

impl<T: Scalar> Step<'_, T> {
    fn run(&self, s: &Sample<T>, gseg: &mut Grads<T>, gunmix: Option<&mut Grads<T>>) -> Result<f64> {
        let x_mix = s.x_mix()?;
        let y_mix = s.y_mix()?;
        let dims = x_mix.dims();
        let (c, n) = (y_mix.classes(), y_mix.voxels());
        let trace = self.seg.forward_trace(x_mix.data(), dims)?;
        let mut loss = 0.0;
        let mut grad_from_unmix = None;
        if let (Some(unmix), Some(gu)) = (self.unmix, gunmix) {
            let y_hat = LabelField::new_unchecked(c, dims, trace.probs.clone())?;
            let input = UnmixNet::assemble_input(&y_hat, &s.y_ref, s.alpha);
            let ut = unmix.forward_trace(&input, dims)?;
            let (l, gz) = head_loss(&ut.probs, s.y_target.data(), c, n, self.cfg, None);
            loss += l;
            let gin = unmix.backward(&ut, gz, gu, true).expect("input gradient requested");
            grad_from_unmix = Some(gin[..c * n].to_vec());
        }
        let (l, gz) = head_loss(&trace.probs, y_mix.data(), c, n, self.cfg, grad_from_unmix.as_deref());
        loss += l;
        self.seg.backward(&trace, gz, gseg, false);
        Ok(loss)
    }
}

fn check_finite<T: Scalar>(iteration: usize, loss: f64, grads: &[&Grads<T>]) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::Training { iteration, reason: format!("loss is {loss}") });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Training { iteration, reason: "non-finite gradient".into() });
    }
    Ok(())
}

/// Mean joint loss over `batch` with gradients for both networks.
/// With `unmix = None` only the segmentation terms are used.
pub fn joint_objective<T: Scalar>(
    seg: &ConvNet<T>,
    unmix: Option<&ConvNet<T>>,
    batch: &[Sample<T>],
    cfg: &TrainConfig,
) -> Result<(f64, Grads<T>, Option<Grads<T>>)> {
    let mut gseg = Grads::zeros_like(seg);
    let mut gunmix = unmix.map(Grads::zeros_like);
    let step = Step { seg, unmix, cfg };
    let mut loss = 0.0;
    for s in batch {
        loss += step.run(s, &mut gseg, gunmix.as_mut())?;
    }
    let inv = T::of(1.0 / batch.len() as f64);
    gseg.scale(inv);
    if let Some(g) = gunmix.as_mut() {
        g.scale(inv);
    }
    Ok((loss / batch.len() as f64, gseg, gunmix))
}

fn run_loop<T: Scalar>(
    seg: &mut ConvNet<T>,
    mut unmix: Option<&mut ConvNet<T>>,
    data: &TrainingSet<T>,
    cfg: &TrainConfig,
    mode: Mode,
) -> Result<TrainLog> {
    cfg.validate()?;
    let mut rng = rng_from(cfg.seed);
    let mut seg_opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut unmix_opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut log = TrainLog::default();
    let mut drawn = 0;
    for it in 0..cfg.iterations {
        let batch = (0..cfg.batch_size)
            .map(|_| {
                drawn += 1;
                data.draw(&mut rng, cfg.alpha, drawn - 1)
            })
            .collect::<Result<Vec<_>>>()?;
        let joint = if mode == Mode::Joint { unmix.as_deref() } else { None };
        let (loss, mut gs, gu) = joint_objective(seg, joint, &batch, cfg)?;
        check_finite(it, loss, &[&gs])?;
        if let Some(g) = &gu {
            check_finite(it, loss, &[g])?;
        }
        seg_opt.step(seg.params_mut(), gs.flat_mut());
        if let (Some(u), Some(mut g)) = (unmix.as_deref_mut(), gu) {
            unmix_opt.step(u.params_mut(), g.flat_mut());
        }
        log.losses.push(loss);
        if it % 100 == 0 {
            log::debug!("iteration {it}: loss {loss:.4}");
        }
    }
    Ok(log)
}

/// Trains the server segmenter on mixtures only.
pub fn train_segmenter<T: Scalar>(seg: &mut TinyCnn<T>, data: &TrainingSet<T>, cfg: &TrainConfig) -> Result<TrainLog> {
    run_loop(&mut seg.net, None, data, cfg, Mode::Segmenter)
}

/// Trains segmenter and decoder jointly, backpropagating through the decoder into the segmenter.
pub fn train_end_to_end<T: Scalar>(
    seg: &mut TinyCnn<T>,
    unmix: &mut UnmixNet<T>,
    data: &TrainingSet<T>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    if seg.classes() != unmix.classes() {
        return Err(Error::dim("segmenter and decoder disagree on class count"));
    }
    run_loop(&mut seg.net, Some(&mut unmix.net), data, cfg, Mode::Joint)
}

/// Trains only the decoder; `segment` supplies the mixed prediction for each sample
/// (an oracle, a noisy oracle or a frozen segmenter).
pub fn train_unmixer<T, F>(unmix: &mut UnmixNet<T>, data: &TrainingSet<T>, cfg: &TrainConfig, mut segment: F) -> Result<TrainLog>
where
    T: Scalar,
    F: FnMut(&Sample<T>, &Volume<T>) -> Result<LabelField<T>>,
{
    cfg.validate()?;
    let mut rng = rng_from(cfg.seed);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum);
    let mut log = TrainLog::default();
    let mut drawn = 0;
    for it in 0..cfg.iterations {
        let mut grads = Grads::zeros_like(&unmix.net);
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let s = data.draw(&mut rng, cfg.alpha, drawn)?;
            drawn += 1;
            let y_hat = segment(&s, &s.x_mix()?)?;
            let dims = y_hat.dims();
            let (c, n) = (y_hat.classes(), y_hat.voxels());
            let trace = unmix.net.forward_trace(&UnmixNet::assemble_input(&y_hat, &s.y_ref, s.alpha), dims)?;
            let (l, gz) = head_loss(&trace.probs, s.y_target.data(), c, n, cfg, None);
            unmix.net.backward(&trace, gz, &mut grads, false);
            loss += l;
        }
        loss /= cfg.batch_size as f64;
        grads.scale(T::of(1.0 / cfg.batch_size as f64));
        check_finite(it, loss, &[&grads])?;
        opt.step(unmix.net.params_mut(), grads.flat_mut());
        log.losses.push(loss);
    }
    Ok(log)
}
