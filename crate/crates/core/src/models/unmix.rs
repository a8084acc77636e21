use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::ConvNet;
use crate::scalar::Scalar;
use crate::tensor::LabelField;

pub const UNMIX_HIDDEN: usize = 16;

/// Client-side learned decoder `D(y_mix_hat, y_ref, alpha)`.
///
/// Two 3x3x3 convolutions over the channel concatenation of the predicted
/// mixture, the reference labels and a constant alpha plane.
#[derive(Debug, Clone, PartialEq)]
pub struct UnmixNet<T: Scalar = f32> {
    pub net: ConvNet<T>,
}

impl<T: Scalar> UnmixNet<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, classes: usize) -> Self {
        Self { net: ConvNet::new(rng, &[2 * classes + 1, UNMIX_HIDDEN, classes], 3) }
    }

    pub fn from_net(net: ConvNet<T>) -> Result<Self> {
        if net.in_channels() != 2 * net.out_channels() + 1 {
            return Err(Error::dim("decoder input must be 2C + 1 channels"));
        }
        Ok(Self { net })
    }

    pub fn classes(&self) -> usize {
        self.net.out_channels()
    }

    pub(crate) fn assemble_input(y_mix_hat: &LabelField<T>, y_ref: &LabelField<T>, alpha: f64) -> Vec<T> {
        let mut input = Vec::with_capacity((2 * y_mix_hat.classes() + 1) * y_mix_hat.voxels());
        input.extend_from_slice(y_mix_hat.data());
        input.extend_from_slice(y_ref.data());
        input.extend(std::iter::repeat(T::of(alpha)).take(y_mix_hat.voxels()));
        input
    }
}

pub fn unmix_net_apply<T: Scalar>(
    net: &UnmixNet<T>,
    y_mix_hat: &LabelField<T>,
    y_ref: &LabelField<T>,
    alpha: f64,
) -> Result<LabelField<T>> {
    if y_mix_hat.dims() != y_ref.dims() || y_mix_hat.classes() != y_ref.classes() || y_ref.classes() != net.classes() {
        return Err(Error::dim("unmix inputs disagree in shape or class count"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config(format!("alpha {alpha} outside (0, 1]")));
    }
    let probs = net.net.forward(&UnmixNet::assemble_input(y_mix_hat, y_ref, alpha), y_mix_hat.dims())?;
    LabelField::new(net.classes(), y_mix_hat.dims(), probs)
}
