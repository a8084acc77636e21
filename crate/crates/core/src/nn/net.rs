use rand::Rng;

use super::conv::{Conv3d, PadGeom};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{voxel_count, Dims3};

/// Stack of convolutions with ReLU between them and a channel softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet<T: Scalar> {
    pub layers: Vec<Conv3d<T>>,
}

/// Per-layer gradients, shaped like the network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T: Scalar> {
    pub weight: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

impl<T: Scalar> Grads<T> {
    pub fn zeros_like(net: &ConvNet<T>) -> Self {
        Self {
            weight: net.layers.iter().map(|l| vec![T::zero(); l.weight.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
        }
    }

    pub fn scale(&mut self, s: T) {
        for v in self.weight.iter_mut().chain(self.bias.iter_mut()) {
            for g in v {
                *g *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).flatten().all(|g| g.is_finite())
    }
}

/// Saved activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T: Scalar> {
    dims: Dims3,
    padded_inputs: Vec<Vec<T>>,
    pre_activations: Vec<Vec<T>>,
    pub probs: Vec<T>,
}

/// In-place channel softmax over `(C, n)` logits.
pub fn softmax_channels<T: Scalar>(logits: &mut [T], classes: usize, n: usize) {
    for v in 0..n {
        let mut max = T::neg_infinity();
        for c in 0..classes {
            max = max.max(logits[c * n + v]);
        }
        let mut sum = T::zero();
        for c in 0..classes {
            let e = (logits[c * n + v] - max).exp();
            logits[c * n + v] = e;
            sum += e;
        }
        for c in 0..classes {
            logits[c * n + v] /= sum;
        }
    }
}

/// Pulls a gradient w.r.t. softmax outputs back to the logits.
pub fn softmax_backward<T: Scalar>(probs: &[T], grad_probs: &[T], classes: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); probs.len()];
    for v in 0..n {
        let mut inner = T::zero();
        for c in 0..classes {
            inner += probs[c * n + v] * grad_probs[c * n + v];
        }
        for c in 0..classes {
            out[c * n + v] = probs[c * n + v] * (grad_probs[c * n + v] - inner);
        }
    }
    out
}

impl<T: Scalar> ConvNet<T> {
    /// `channels[0]` inputs, hidden widths, `channels.last()` classes.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, channels: &[usize], kernel: usize) -> Self {
        let layers = channels.windows(2).map(|w| Conv3d::new(rng, w[0], w[1], kernel)).collect();
        Self { layers }
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().unwrap().out_channels
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Conv3d::param_count).sum()
    }

    fn check_input(&self, input: &[T], dims: Dims3) -> Result<()> {
        if input.len() != self.in_channels() * voxel_count(dims) {
            return Err(Error::dim(format!(
                "network expects {} input channels over {dims:?}, got {} values",
                self.in_channels(),
                input.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::dim("empty spatial extent"));
        }
        Ok(())
    }

    pub fn forward_trace(&self, input: &[T], dims: Dims3) -> Result<Trace<T>> {
        self.check_input(input, dims)?;
        let n = voxel_count(dims);
        let mut padded_inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len() - 1);
        let mut x = input.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let geom = PadGeom::new(dims, layer.kernel);
            let (mut out, padded) = layer.forward(&geom, &x);
            padded_inputs.push(padded);
            if li + 1 < self.layers.len() {
                pre_activations.push(out.clone());
                for v in &mut out {
                    *v = v.max(T::zero());
                }
            } else {
                softmax_channels(&mut out, layer.out_channels, n);
            }
            x = out;
        }
        Ok(Trace { dims, padded_inputs, pre_activations, probs: x })
    }

    pub fn forward(&self, input: &[T], dims: Dims3) -> Result<Vec<T>> {
        Ok(self.forward_trace(input, dims)?.probs)
    }

    /// Backpropagates a gradient w.r.t. the logits of the head; accumulates into `grads`.
    pub fn backward(&self, trace: &Trace<T>, grad_logits: Vec<T>, grads: &mut Grads<T>, need_input_grad: bool) -> Option<Vec<T>> {
        let mut g = grad_logits;
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let geom = PadGeom::new(trace.dims, layer.kernel);
            let want = li > 0 || need_input_grad;
            let gin = layer.backward(&geom, &trace.padded_inputs[li], &g, &mut grads.weight[li], &mut grads.bias[li], want);
            match gin {
                Some(mut gin) if li > 0 => {
                    for (gv, pre) in gin.iter_mut().zip(&trace.pre_activations[li - 1]) {
                        if *pre <= T::zero() {
                            *gv = T::zero();
                        }
                    }
                    g = gin;
                }
                other => return other,
            }
        }
        None
    }

    /// Flat mutable parameter slices, layer by layer (weights then bias).
    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ConvNet<U> {
        ConvNet {
            layers: self
                .layers
                .iter()
                .map(|l| Conv3d {
                    in_channels: l.in_channels,
                    out_channels: l.out_channels,
                    kernel: l.kernel,
                    weight: l.weight.iter().map(|v| U::of(v.as_f64())).collect(),
                    bias: l.bias.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
        }
    }
}

impl<T: Scalar> Grads<T> {
    pub fn flat_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.weight.iter_mut().zip(self.bias.iter_mut()).flat_map(|(w, b)| [w, b]).collect()
    }
}
