use std::fmt::Debug;

use crate::error::VolumeError;

/// Element types an MVOL file can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    I16 = 1,
    F32 = 2,
    U8 = 3,
}

impl Dtype {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Dtype::I16),
            2 => Some(Dtype::F32),
            3 => Some(Dtype::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::I16 => 2,
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::I16 => "i16",
            Dtype::F32 => "f32",
            Dtype::U8 => "u8",
        }
    }
}

pub trait Voxel: Copy + Default + PartialEq + Debug + Send + Sync + 'static {
    const DTYPE: Dtype;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Voxel for i16 {
    const DTYPE: Dtype = Dtype::I16;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(b: &[u8]) -> Self {
        i16::from_le_bytes([b[0], b[1]])
    }
}

impl Voxel for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(b: &[u8]) -> Self {
        f32::from_le_bytes([b[0], b[1], b[2], b[3]])
    }
}

impl Voxel for u8 {
    const DTYPE: Dtype = Dtype::U8;
    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn read_le(b: &[u8]) -> Self {
        b[0]
    }
}

/// Dense 3-D grid stored x-fastest, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume<V> {
    dims: [usize; 3],
    spacing: [f32; 3],
    voxels: Vec<V>,
}

/// Hounsfield units.
pub type CtVolume = Volume<i16>;
/// Labels: {0, 1} for a binary stage mask, {0, 1, 2} for liver/lesion ground truth.
pub type MaskVolume = Volume<u8>;
pub type ProbVolume = Volume<f32>;

impl<V: Voxel> Volume<V> {
    pub fn new(dims: [usize; 3], spacing: [f32; 3], voxels: Vec<V>) -> Result<Self, VolumeError> {
        let n = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        if n != Some(voxels.len()) || dims.contains(&0) {
            return Err(VolumeError::VoxelCount {
                dims,
                len: voxels.len(),
            });
        }
        Ok(Self { dims, spacing, voxels })
    }

    pub fn filled(dims: [usize; 3], spacing: [f32; 3], value: V) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            spacing,
            voxels: vec![value; n],
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f32; 3] {
        self.spacing
    }

    pub fn voxels(&self) -> &[V] {
        &self.voxels
    }

    pub fn voxels_mut(&mut self) -> &mut [V] {
        &mut self.voxels
    }

    pub fn into_voxels(self) -> Vec<V> {
        self.voxels
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> V {
        self.voxels[self.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: V) {
        let i = self.index(x, y, z);
        self.voxels[i] = v;
    }

    pub fn slice_len(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    /// Axial slice `z` as a row-major `[ny, nx]` plane.
    pub fn slice(&self, z: usize) -> Result<&[V], VolumeError> {
        if z >= self.dims[2] {
            return Err(VolumeError::SliceOutOfRange { z, nz: self.dims[2] });
        }
        let n = self.slice_len();
        Ok(&self.voxels[z * n..(z + 1) * n])
    }

    pub fn slice_mut(&mut self, z: usize) -> Result<&mut [V], VolumeError> {
        if z >= self.dims[2] {
            return Err(VolumeError::SliceOutOfRange { z, nz: self.dims[2] });
        }
        let n = self.slice_len();
        Ok(&mut self.voxels[z * n..(z + 1) * n])
    }

    pub fn map<U: Voxel>(&self, f: impl Fn(V) -> U) -> Volume<U> {
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            voxels: self.voxels.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn check_same_dims<U: Voxel>(&self, other: &Volume<U>) -> Result<(), VolumeError> {
        if self.dims != other.dims {
            return Err(VolumeError::DimMismatch {
                a: self.dims,
                b: other.dims,
            });
        }
        Ok(())
    }
}

impl MaskVolume {
    /// Binary mask of voxels equal to `label`, or `>= label` when `at_least` is set.
    pub fn select_label(&self, label: u8, at_least: bool) -> MaskVolume {
        self.map(|v| u8::from(if at_least { v >= label } else { v == label }))
    }

    pub fn count_nonzero(&self) -> usize {
        self.voxels.iter().filter(|&&v| v != 0).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn x_fastest_indexing() {
        let v = Volume::new([2, 3, 4], [1.0; 3], (0..24u8).collect()).unwrap();
        assert_eq!(v.get(1, 0, 0), 1);
        assert_eq!(v.get(0, 1, 0), 2);
        assert_eq!(v.get(0, 0, 1), 6);
        assert_eq!(v.slice(2).unwrap(), &(12..18u8).collect::<Vec<_>>()[..]);
        assert!(v.slice(4).is_err());
    }

    #[test]
    fn rejects_bad_counts() {
        assert!(Volume::<u8>::new([2, 2, 2], [1.0; 3], vec![0; 7]).is_err());
        assert!(Volume::<u8>::new([0, 2, 2], [1.0; 3], vec![]).is_err());
    }
}
