//! MXSG binary container: magic `MXSG`, version `u16`, dtype `u8`, ndim `u8`,
//! `ndim` little-endian `u32` dims, then the little-endian payload.
//!
//! Dtype 0 is 32-bit float. Dtype 1 carries 64-bit floats for pipelines that
//! need better than single precision.

use std::fs;
use std::path::Path;

use super::{Dims3, LabelField, Volume};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MXSG_MAGIC: [u8; 4] = *b"MXSG";
pub const MXSG_VERSION: u16 = 1;
const HEADER: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    pub dims: Vec<usize>,
    pub data: Vec<T>,
}

fn width(dtype: u8) -> Result<usize> {
    match dtype {
        0 => Ok(4),
        1 => Ok(8),
        other => Err(Error::Format(format!("unknown MXSG dtype code {other}"))),
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!("tensor dims {dims:?} need {n} values, got {}", data.len())));
        }
        if dims.len() > u8::MAX as usize || dims.iter().any(|&d| d > u32::MAX as usize) {
            return Err(Error::dim("tensor rank or extent exceeds the MXSG header range"));
        }
        Ok(Self { dims, data })
    }

    pub fn encoded_len(&self) -> usize {
        HEADER + 4 * self.dims.len() + T::WIDTH * self.data.len()
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.reserve(self.encoded_len());
        out.extend_from_slice(&MXSG_MAGIC);
        out.extend_from_slice(&MXSG_VERSION.to_le_bytes());
        out.push(T::DTYPE);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            v.write_le(out);
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    /// Decodes one tensor from the front of `bytes`, returning it and the bytes consumed.
    /// Payloads of the other float width are converted.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < HEADER {
            return Err(Error::Format("MXSG header truncated".into()));
        }
        if bytes[..4] != MXSG_MAGIC {
            return Err(Error::Format("bad MXSG magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != MXSG_VERSION {
            return Err(Error::Format(format!("unsupported MXSG version {version}")));
        }
        let w = width(bytes[6])?;
        let ndim = bytes[7] as usize;
        let dims_end = HEADER + 4 * ndim;
        if bytes.len() < dims_end {
            return Err(Error::Format("MXSG dims truncated".into()));
        }
        let dims: Vec<usize> = bytes[HEADER..dims_end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let end = n
            .and_then(|n| n.checked_mul(w))
            .and_then(|b| b.checked_add(dims_end))
            .ok_or_else(|| Error::Format("MXSG dims overflow".into()))?;
        if bytes.len() < end {
            return Err(Error::Format("MXSG payload truncated".into()));
        }
        let payload = &bytes[dims_end..end];
        let data = if w == T::WIDTH {
            payload.chunks_exact(w).map(T::read_le).collect()
        } else if w == 4 {
            payload.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect()
        } else {
            payload.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect()
        };
        Ok((Self { dims, data }, end))
    }

    /// Decodes a buffer holding exactly one tensor.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (t, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after MXSG tensor", bytes.len() - used)));
        }
        Ok(t)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(fs::write(path, self.encode())?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    fn dims3(&self, offset: usize) -> Result<Dims3> {
        Ok([self.dims[offset], self.dims[offset + 1], self.dims[offset + 2]])
    }

    pub fn into_volume(self) -> Result<Volume<T>> {
        if self.dims.len() != 3 {
            return Err(Error::dim(format!("volume tensor must be 3-D, got {:?}", self.dims)));
        }
        Volume::new(self.dims3(0)?, self.data)
    }

    pub fn into_labels(self) -> Result<LabelField<T>> {
        if self.dims.len() != 4 {
            return Err(Error::dim(format!("label tensor must be 4-D, got {:?}", self.dims)));
        }
        LabelField::new(self.dims[0], self.dims3(1)?, self.data)
    }
}

impl<T: Scalar> From<&Volume<T>> for Tensor<T> {
    fn from(v: &Volume<T>) -> Self {
        Self { dims: v.dims().to_vec(), data: v.data().to_vec() }
    }
}

impl<T: Scalar> From<&LabelField<T>> for Tensor<T> {
    fn from(l: &LabelField<T>) -> Self {
        let [h, w, d] = l.dims();
        Self { dims: vec![l.classes(), h, w, d], data: l.data().to_vec() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let t = Tensor::<f32>::new(vec![2, 1, 1], vec![1.0, 0.5]).unwrap();
        let b = t.encode();
        assert_eq!(&b[..8], &[b'M', b'X', b'S', b'G', 1, 0, 0, 3]);
        assert_eq!(&b[8..20], &[2, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[20..], &[0, 0, 0x80, 0x3f, 0, 0, 0, 0x3f]);
    }

    #[test]
    fn widths_convert() {
        let t = Tensor::<f32>::new(vec![3], vec![0.25, 0.5, 1.0]).unwrap();
        let wide = Tensor::<f64>::decode(&t.encode()).unwrap();
        assert_eq!(wide.data, vec![0.25, 0.5, 1.0]);
    }

    #[test]
    fn truncation_and_magic_are_rejected() {
        let b = Tensor::<f64>::new(vec![2, 2], vec![0.0; 4]).unwrap().encode();
        assert!(Tensor::<f64>::decode(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'N';
        assert!(Tensor::<f64>::decode(&bad).is_err());
    }

    proptest! {
        #[test]
        fn encoding_round_trips(dims in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n).map(|i| ((seed.wrapping_mul(i as u64 + 1)) as f64).sin()).collect();
            let t = Tensor::new(dims, data).unwrap();
            let bytes = t.encode();
            let back = Tensor::<f64>::decode(&bytes).unwrap();
            prop_assert_eq!(back.encode(), bytes);
            prop_assert_eq!(back, t);
        }
    }
}
