//! Parameter checkpoints: a plain-text index followed by MXSG tensors.
//!
//! ```text
//! MXCK 1
//! tensor seg.0.weight 0 1752
//! tensor seg.0.bias 1752 80
//! end
//! <MXSG blobs, offsets relative to the byte after "end\n">
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Conv3d, ConvNet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint<T: Scalar = f32> {
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new() -> Self {
        Self { tensors: Vec::new() }
    }

    pub fn insert_net(&mut self, prefix: &str, net: &ConvNet<T>) {
        for (i, l) in net.layers.iter().enumerate() {
            let k = l.kernel;
            self.tensors.push((
                format!("{prefix}.{i}.weight"),
                Tensor { dims: vec![l.out_channels, l.in_channels, k, k, k], data: l.weight.clone() },
            ));
            self.tensors.push((format!("{prefix}.{i}.bias"), Tensor { dims: vec![l.out_channels], data: l.bias.clone() }));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn has_net(&self, prefix: &str) -> bool {
        self.get(&format!("{prefix}.0.weight")).is_some()
    }

    pub fn net(&self, prefix: &str) -> Result<ConvNet<T>> {
        let mut layers = Vec::new();
        while let Some(w) = self.get(&format!("{prefix}.{}.weight", layers.len())) {
            let b = self
                .get(&format!("{prefix}.{}.bias", layers.len()))
                .ok_or_else(|| Error::Format(format!("{prefix}: missing bias for layer {}", layers.len())))?;
            if w.dims.len() != 5 || b.dims != [w.dims[0]] || w.dims[2] != w.dims[3] || w.dims[3] != w.dims[4] {
                return Err(Error::Format(format!("{prefix}: malformed layer {}", layers.len())));
            }
            layers.push(Conv3d {
                out_channels: w.dims[0],
                in_channels: w.dims[1],
                kernel: w.dims[2],
                weight: w.data.clone(),
                bias: b.data.clone(),
            });
        }
        if layers.is_empty() {
            return Err(Error::Format(format!("checkpoint has no network {prefix:?}")));
        }
        if layers.windows(2).any(|p| p[0].out_channels != p[1].in_channels) {
            return Err(Error::Format(format!("{prefix}: layer widths do not chain")));
        }
        Ok(ConvNet { layers })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut index = String::from("MXCK 1\n");
        let mut blob = Vec::new();
        for (name, t) in &self.tensors {
            let start = blob.len();
            t.encode_into(&mut blob);
            index.push_str(&format!("tensor {name} {start} {}\n", blob.len() - start));
        }
        index.push_str("end\n");
        let mut out = index.into_bytes();
        out.extend_from_slice(&blob);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        let mut pos = 0;
        let mut next_line = |bytes: &[u8]| -> Result<String> {
            let end = bytes[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| bad("unterminated index"))?;
            let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("index is not UTF-8"))?.to_string();
            pos += end + 1;
            Ok(line)
        };
        if next_line(bytes)? != "MXCK 1" {
            return Err(bad("bad header"));
        }
        let mut index = Vec::new();
        loop {
            let line = next_line(bytes)?;
            if line == "end" {
                break;
            }
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 4 || parts[0] != "tensor" {
                return Err(bad(&format!("bad index line {line:?}")));
            }
            let off: usize = parts[2].parse().map_err(|_| bad("bad offset"))?;
            let len: usize = parts[3].parse().map_err(|_| bad("bad length"))?;
            index.push((parts[1].to_string(), off, len));
        }
        let blob = &bytes[pos..];
        let tensors = index
            .into_iter()
            .map(|(name, off, len)| {
                let slice = blob.get(off..off + len).ok_or_else(|| bad("tensor out of range"))?;
                Ok((name, Tensor::decode(slice)?))
            })
            .collect::<Result<_>>()?;
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Ok(fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
