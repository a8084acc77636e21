use super::{flat_index, voxel_count, Dims3, LabelField, Volume};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Regular patch tiling of a parent volume. The last position on each axis is
/// shifted inward so every patch lies inside the parent; nothing is padded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    parent: Dims3,
    patch: Dims3,
    stride: Dims3,
    origins: Vec<Dims3>,
}

impl PatchGrid {
    pub fn new(parent: Dims3, patch: Dims3, stride: Dims3) -> Result<Self> {
        for a in 0..3 {
            if patch[a] == 0 || patch[a] > parent[a] {
                return Err(Error::dim(format!("patch {patch:?} does not fit in volume {parent:?}")));
            }
            if stride[a] == 0 || stride[a] > patch[a] {
                return Err(Error::config(format!("stride {stride:?} leaves gaps for patch {patch:?}")));
            }
        }
        let axis = |a: usize| -> Vec<usize> {
            let last = parent[a] - patch[a];
            let mut pos: Vec<usize> = (0..).map(|k| k * stride[a]).take_while(|&p| p < last).collect();
            pos.push(last);
            pos
        };
        let (ph, pw, pd) = (axis(0), axis(1), axis(2));
        let mut origins = Vec::with_capacity(ph.len() * pw.len() * pd.len());
        for &h in &ph {
            for &w in &pw {
                for &d in &pd {
                    origins.push([h, w, d]);
                }
            }
        }
        Ok(Self { parent, patch, stride, origins })
    }

    /// Non-overlapping tiling (stride equals patch size).
    pub fn tiled(parent: Dims3, patch: Dims3) -> Result<Self> {
        Self::new(parent, patch, patch)
    }

    pub fn parent_dims(&self) -> Dims3 {
        self.parent
    }

    pub fn patch_dims(&self) -> Dims3 {
        self.patch
    }

    pub fn stride(&self) -> Dims3 {
        self.stride
    }

    pub fn origins(&self) -> &[Dims3] {
        &self.origins
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }
}

/// A sub-block of a parent grid together with its origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch<V> {
    pub origin: Dims3,
    pub data: V,
}

fn check_parent(grid: &PatchGrid, dims: Dims3) -> Result<()> {
    if grid.parent != dims {
        return Err(Error::dim(format!("grid built for {:?}, volume is {:?}", grid.parent, dims)));
    }
    Ok(())
}

pub(crate) fn crop<T: Copy>(src: &[T], src_dims: Dims3, origin: Dims3, dims: Dims3, out: &mut Vec<T>) {
    for h in 0..dims[0] {
        for w in 0..dims[1] {
            let start = flat_index(src_dims, origin[0] + h, origin[1] + w, origin[2]);
            out.extend_from_slice(&src[start..start + dims[2]]);
        }
    }
}

/// Intensity patches in row-major grid order.
pub fn extract_patches<T: Scalar>(vol: &Volume<T>, grid: &PatchGrid) -> Result<Vec<Patch<Volume<T>>>> {
    check_parent(grid, vol.dims())?;
    grid.origins
        .iter()
        .map(|&origin| {
            let mut buf = Vec::with_capacity(voxel_count(grid.patch));
            crop(vol.data(), vol.dims(), origin, grid.patch, &mut buf);
            let data = Volume::new(grid.patch, buf)?.with_ids(vol.subject_id.clone(), vol.scan_id.clone());
            Ok(Patch { origin, data })
        })
        .collect()
}

/// Label patches in row-major grid order.
pub fn extract_label_patches<T: Scalar>(
    labels: &LabelField<T>,
    grid: &PatchGrid,
) -> Result<Vec<Patch<LabelField<T>>>> {
    check_parent(grid, labels.dims())?;
    grid.origins
        .iter()
        .map(|&origin| {
            let mut buf = Vec::with_capacity(labels.classes() * voxel_count(grid.patch));
            for c in 0..labels.classes() {
                crop(labels.channel(c), labels.dims(), origin, grid.patch, &mut buf);
            }
            Ok(Patch { origin, data: LabelField::new_unchecked(labels.classes(), grid.patch, buf)? })
        })
        .collect()
}

/// Uniform-weight overlap accumulation shared by label and intensity reassembly.
fn accumulate<'a, T: Scalar>(
    parts: impl Iterator<Item = (Dims3, Dims3, &'a [T])>,
    channels: usize,
    parent: Dims3,
) -> Result<Vec<T>> {
    let n = voxel_count(parent);
    let mut sum = vec![0.0f64; channels * n];
    let mut count = vec![0u32; n];
    for (origin, dims, data) in parts {
        for a in 0..3 {
            if origin[a] + dims[a] > parent[a] {
                return Err(Error::dim(format!("patch at {origin:?} of {dims:?} exceeds {parent:?}")));
            }
        }
        let pn = voxel_count(dims);
        if data.len() != channels * pn {
            return Err(Error::dim("patch channel count differs from the others"));
        }
        for h in 0..dims[0] {
            for w in 0..dims[1] {
                let dst = flat_index(parent, origin[0] + h, origin[1] + w, origin[2]);
                let src = (h * dims[1] + w) * dims[2];
                for k in 0..dims[2] {
                    count[dst + k] += 1;
                }
                for c in 0..channels {
                    let s = &data[c * pn + src..c * pn + src + dims[2]];
                    let d = &mut sum[c * n + dst..c * n + dst + dims[2]];
                    for (acc, v) in d.iter_mut().zip(s) {
                        *acc += v.as_f64();
                    }
                }
            }
        }
    }
    if let Some(v) = count.iter().position(|&c| c == 0) {
        let d = v % parent[2];
        let w = (v / parent[2]) % parent[1];
        let h = v / (parent[1] * parent[2]);
        return Err(Error::Coverage([h, w, d]));
    }
    Ok(sum
        .iter()
        .enumerate()
        .map(|(i, s)| T::of(s / count[i % n] as f64))
        .collect())
}

/// Averages overlapping label patches and renormalizes each voxel to channel-sum 1.
pub fn reassemble<T: Scalar>(patches: &[Patch<LabelField<T>>], parent: Dims3) -> Result<LabelField<T>> {
    let classes = patches.first().map(|p| p.data.classes()).ok_or(Error::Coverage([0, 0, 0]))?;
    if patches.iter().any(|p| p.data.classes() != classes) {
        return Err(Error::dim("patches disagree on class count"));
    }
    let mut data = accumulate(patches.iter().map(|p| (p.origin, p.data.dims(), p.data.data())), classes, parent)?;
    let n = voxel_count(parent);
    for v in 0..n {
        let s: T = (0..classes).map(|c| data[c * n + v]).sum();
        if s > T::zero() {
            for c in 0..classes {
                data[c * n + v] /= s;
            }
        }
    }
    LabelField::new(classes, parent, data)
}

/// Averages overlapping intensity patches back into a full volume.
pub fn reassemble_volume<T: Scalar>(patches: &[Patch<Volume<T>>], parent: Dims3) -> Result<Volume<T>> {
    let data = accumulate(patches.iter().map(|p| (p.origin, p.data.dims(), p.data.data())), 1, parent)?;
    Volume::from_clamped(parent, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: Dims3) -> Volume<f64> {
        let n = voxel_count(dims);
        Volume::new(dims, (0..n).map(|i| i as f64 / n as f64).collect()).unwrap()
    }

    #[test]
    fn exact_tiling_octants() {
        let g = PatchGrid::tiled([64; 3], [32; 3]).unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g.origins()[0], [0, 0, 0]);
        assert_eq!(g.origins()[1], [0, 0, 32]);
        assert_eq!(g.origins()[7], [32, 32, 32]);
    }

    #[test]
    fn edge_patches_shift_inward() {
        // positions min(k * stride, dim - patch): k = 0 -> 0, k = 1 -> min(32, 16) = 16
        let g = PatchGrid::tiled([48; 3], [32; 3]).unwrap();
        assert_eq!(g.len(), 8);
        let expected: Vec<Dims3> = [0, 16]
            .iter()
            .flat_map(|&h| [0, 16].iter().flat_map(move |&w| [0, 16].iter().map(move |&d| [h, w, d])))
            .collect();
        assert_eq!(g.origins(), &expected[..]);
    }

    #[test]
    fn identity_grid() {
        let g = PatchGrid::tiled([32; 3], [32; 3]).unwrap();
        assert_eq!(g.origins(), &[[0, 0, 0]]);
        let v = ramp([32; 3]);
        let p = extract_patches(&v, &g).unwrap();
        assert_eq!(p[0].data.data(), v.data());
    }

    #[test]
    fn oversized_patch_is_rejected() {
        assert!(matches!(PatchGrid::tiled([16, 32, 32], [32; 3]), Err(Error::Dimension(_))));
        let g = PatchGrid::tiled([32; 3], [16; 3]).unwrap();
        assert!(extract_patches(&ramp([16; 3]), &g).is_err());
    }

    #[test]
    fn uncovered_voxel_reports_coverage() {
        let labels = LabelField::<f64>::one_hot(2, [4, 4, 4], &[1; 64]).unwrap();
        let g = PatchGrid::tiled([4; 3], [2; 3]).unwrap();
        let mut patches = extract_label_patches(&labels, &g).unwrap();
        patches.pop();
        assert!(matches!(reassemble(&patches, [4; 3]), Err(Error::Coverage([2, 2, 2]))));
    }

    #[test]
    fn overlapping_conflict_averages() {
        let a = LabelField::<f64>::new(2, [1, 1, 1], vec![1.0, 0.0]).unwrap();
        let b = LabelField::<f64>::new(2, [1, 1, 1], vec![0.0, 1.0]).unwrap();
        let out = reassemble(
            &[Patch { origin: [0, 0, 0], data: a.clone() }, Patch { origin: [0, 0, 0], data: b }],
            [1, 1, 1],
        )
        .unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);
        let same = reassemble(
            &[Patch { origin: [0, 0, 0], data: a.clone() }, Patch { origin: [0, 0, 0], data: a.clone() }],
            [1, 1, 1],
        )
        .unwrap();
        assert_eq!(same, a);
    }

    #[test]
    fn tiled_ground_truth_round_trips_exactly() {
        let dims = [8, 6, 10];
        let labels: Vec<u8> = (0..voxel_count(dims)).map(|i| (i * 7 % 3) as u8).collect();
        let field = LabelField::<f32>::one_hot(3, dims, &labels).unwrap();
        let g = PatchGrid::tiled(dims, [4, 3, 5]).unwrap();
        let out = reassemble(&extract_label_patches(&field, &g).unwrap(), dims).unwrap();
        assert_eq!(out, field);
    }

    #[test]
    fn volume_round_trip_with_overlap() {
        let dims = [20, 17, 9];
        let v = ramp(dims);
        let g = PatchGrid::new(dims, [8, 8, 4], [5, 3, 2]).unwrap();
        let back = reassemble_volume(&extract_patches(&v, &g).unwrap(), dims).unwrap();
        for (a, b) in back.data().iter().zip(v.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
