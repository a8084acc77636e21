//! Privacy-preserving 3D segmentation by mixing scans with private references.
//!
//! Every numeric type is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below name the common instantiations.

pub mod attacks;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod mixer;
pub mod models;
pub mod nn;
mod parallel;
pub mod phantom;
pub mod protocol;
pub mod scalar;
pub mod seeds;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type VolumeF32 = tensor::Volume<f32>;
pub type VolumeF64 = tensor::Volume<f64>;
pub type LabelFieldF32 = tensor::LabelField<f32>;
pub type LabelFieldF64 = tensor::LabelField<f64>;
pub type MixKeyF32 = mixer::MixKey<f32>;
pub type MixKeyF64 = mixer::MixKey<f64>;
pub type ReferencePoolF32 = mixer::ReferencePool<f32>;
pub type ReferencePoolF64 = mixer::ReferencePool<f64>;
pub type BackendF32 = models::SegmentationBackend<f32>;
pub type BackendF64 = models::SegmentationBackend<f64>;
pub type TinyCnnF32 = models::TinyCnn<f32>;
pub type TinyCnnF64 = models::TinyCnn<f64>;
pub type UnmixNetF32 = models::UnmixNet<f32>;
pub type UnmixNetF64 = models::UnmixNet<f64>;
