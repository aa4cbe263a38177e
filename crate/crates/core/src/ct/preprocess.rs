//! Intensity windowing, three-slice stacking, slice sampling and flips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::postprocess::Bbox3;
use super::volume::{CtVolume, MaskVolume, ProbVolume};
use crate::error::VolumeError;
use crate::tensor::Tensor;

pub const HU_MIN: f32 = -200.0;
pub const HU_MAX: f32 = 250.0;

/// Clamps to `[HU_MIN, HU_MAX]` and maps that window affinely onto `[0, 1]`.
pub fn hu_to_unit(hu: f32) -> f32 {
    (hu.clamp(HU_MIN, HU_MAX) - HU_MIN) / (HU_MAX - HU_MIN)
}

pub fn hu_window_normalize(v: &CtVolume) -> ProbVolume {
    v.map(|hu| hu_to_unit(f32::from(hu)))
}

/// Slices `z-1, z, z+1` as a `[3, ny, nx]` tensor, repeating the edge slice
/// at either end of the volume.
pub fn stack_adjacent_slices(v: &ProbVolume, z: usize) -> Result<Tensor<f32>, VolumeError> {
    let [nx, ny, nz] = v.dims();
    if z >= nz {
        return Err(VolumeError::SliceOutOfRange { z, nz });
    }
    let mut data = Vec::with_capacity(3 * nx * ny);
    for zz in [z.saturating_sub(1), z, (z + 1).min(nz - 1)] {
        data.extend_from_slice(v.slice(zz)?);
    }
    Ok(Tensor::new(vec![3, ny, nx], data).expect("slice sizes match"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    /// `[3, H, W]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// `[1, H, W]`, values in `{0, 1}`.
    pub target: Tensor<f32>,
    pub z_index: usize,
    pub is_positive: bool,
}

impl SliceSample {
    pub fn build(image: &ProbVolume, target: &MaskVolume, z: usize) -> Result<Self, VolumeError> {
        image.check_same_dims(target)?;
        let [nx, ny, _] = image.dims();
        let t = target.slice(z)?;
        let is_positive = t.iter().any(|&v| v != 0);
        let target = t.iter().map(|&v| if v != 0 { 1.0 } else { 0.0 }).collect();
        Ok(Self {
            image: stack_adjacent_slices(image, z)?,
            target: Tensor::new(vec![1, ny, nx], target).expect("slice size"),
            z_index: z,
            is_positive,
        })
    }

    /// Zeroes image and target outside the in-plane extent of `bbox`.
    pub fn mask_outside(&mut self, bbox: &Bbox3) {
        let (h, w) = (self.image.shape()[1], self.image.shape()[2]);
        let inside = |y: usize, x: usize| (bbox.min[1]..=bbox.max[1]).contains(&y) && (bbox.min[0]..=bbox.max[0]).contains(&x);
        for t in [&mut self.image, &mut self.target] {
            for (i, v) in t.data_mut().iter_mut().enumerate() {
                let p = i % (h * w);
                if !inside(p / w, p % w) {
                    *v = 0.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams {
    pub p_pos: f64,
    pub p_neg: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { p_pos: 0.9, p_neg: 0.1 }
    }
}

/// Draws one Bernoulli trial per eligible slice in ascending `z` and keeps
/// positives with `p_pos`, negatives with `p_neg`. Returns the kept indices.
///
/// `eligible[z] == false` excludes slice `z` without consuming a draw.
pub fn sample_slice_indices(
    target: &MaskVolume,
    eligible: Option<&[bool]>,
    params: SamplingParams,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let nz = target.dims()[2];
    let mut kept = Vec::new();
    for z in 0..nz {
        if eligible.is_some_and(|e| !e.get(z).copied().unwrap_or(false)) {
            continue;
        }
        let positive = target.slice(z).expect("z < nz").iter().any(|&v| v != 0);
        let p = if positive { params.p_pos } else { params.p_neg };
        let u: f64 = rng.gen();
        if u < p {
            kept.push(z);
        }
    }
    kept
}

/// Deterministic stream of samples for one volume pair.
pub fn sample_slices(
    image: &ProbVolume,
    target: &MaskVolume,
    eligible: Option<&[bool]>,
    params: SamplingParams,
    seed: u64,
) -> Result<Vec<SliceSample>, VolumeError> {
    image.check_same_dims(target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_slice_indices(target, eligible, params, &mut rng)
        .into_iter()
        .map(|z| SliceSample::build(image, target, z))
        .collect()
}

/// Reverses the last axis of each `[c, h, w]` plane in place.
pub fn flip_horizontal(t: &mut Tensor<f32>) {
    let w = *t.shape().last().expect("rank >= 1");
    for row in t.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
}

/// Reverses the row order of each `[h, w]` plane in place.
pub fn flip_vertical(t: &mut Tensor<f32>) {
    let s = t.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    for plane in t.data_mut().chunks_exact_mut(h * w) {
        for y in 0..h / 2 {
            let (top, bottom) = plane.split_at_mut((h - 1 - y) * w);
            top[y * w..(y + 1) * w].swap_with_slice(&mut bottom[..w]);
        }
    }
}

/// Which flips [`flip_augment`] applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Flips {
    pub horizontal: bool,
    pub vertical: bool,
}

/// Flips image and target together, each axis independently with probability 1/2.
pub fn flip_augment(sample: &mut SliceSample, rng: &mut impl Rng) -> Flips {
    let flips = Flips {
        horizontal: rng.gen_bool(0.5),
        vertical: rng.gen_bool(0.5),
    };
    apply_flips(sample, flips);
    flips
}

pub fn apply_flips(sample: &mut SliceSample, flips: Flips) {
    for t in [&mut sample.image, &mut sample.target] {
        if flips.horizontal {
            flip_horizontal(t);
        }
        if flips.vertical {
            flip_vertical(t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ct::volume::Volume;

    #[test]
    fn window_anchors() {
        assert_eq!(hu_to_unit(-200.0), 0.0);
        assert_eq!(hu_to_unit(250.0), 1.0);
        assert_eq!(hu_to_unit(-300.0), 0.0);
        assert_eq!(hu_to_unit(400.0), 1.0);
        assert_eq!(hu_to_unit(25.0), 0.5);
    }

    #[test]
    fn stacking_replicates_edges() {
        let v = Volume::new([2, 1, 3], [1.0; 3], vec![0.0f32, 0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let s = stack_adjacent_slices(&v, 0).unwrap();
        assert_eq!(s.shape(), &[3, 1, 2]);
        assert_eq!(s.data(), &[0.0, 0.1, 0.0, 0.1, 0.2, 0.3]);
        let s = stack_adjacent_slices(&v, 1).unwrap();
        assert_eq!(s.data(), &[0.0, 0.1, 0.2, 0.3, 0.4, 0.5]);
        let s = stack_adjacent_slices(&v, 2).unwrap();
        assert_eq!(s.data(), &[0.2, 0.3, 0.4, 0.5, 0.4, 0.5]);
        assert!(stack_adjacent_slices(&v, 3).is_err());
        let one = Volume::new([1, 1, 1], [1.0; 3], vec![0.7f32]).unwrap();
        assert_eq!(stack_adjacent_slices(&one, 0).unwrap().data(), &[0.7; 3]);
    }

    #[test]
    fn flips_are_involutions() {
        let mut t = Tensor::new(vec![2, 3, 4], (0..24).map(|v| v as f32).collect()).unwrap();
        let orig = t.clone();
        flip_vertical(&mut t);
        assert_eq!(&t.data()[..4], &[8.0, 9.0, 10.0, 11.0]);
        flip_vertical(&mut t);
        assert_eq!(t, orig);
        flip_horizontal(&mut t);
        assert_eq!(&t.data()[..4], &[3.0, 2.0, 1.0, 0.0]);
        flip_horizontal(&mut t);
        assert_eq!(t, orig);
    }

    #[test]
    fn sampling_extremes() {
        let img = Volume::filled([2, 2, 5], [1.0; 3], 0.5f32);
        let pos = Volume::filled([2, 2, 5], [1.0; 3], 1u8);
        let p = SamplingParams { p_pos: 1.0, p_neg: 0.0 };
        let all: Vec<_> = sample_slices(&img, &pos, None, p, 3).unwrap().iter().map(|s| s.z_index).collect();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        let none = SamplingParams { p_pos: 0.0, p_neg: 0.0 };
        assert!(sample_slices(&img, &pos, None, none, 3).unwrap().is_empty());
        let elig = [false, true, false, true, true];
        let some: Vec<_> = sample_slices(&img, &pos, Some(&elig), p, 3).unwrap().iter().map(|s| s.z_index).collect();
        assert_eq!(some, vec![1, 3, 4]);
    }
}
