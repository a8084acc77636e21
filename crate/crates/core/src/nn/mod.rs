//! Minimal from-scratch 3D convolutional networks: layers, losses, optimizer.

pub mod conv;
pub mod loss;
pub mod net;
pub mod optim;

pub use conv::Conv3d;
pub use net::{softmax_backward, softmax_channels, ConvNet, Grads, Trace};
pub use optim::Sgd;
