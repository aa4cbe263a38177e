//! Thresholding, 3-D connected components, bounding boxes and the two-stage merge.

use std::collections::VecDeque;

use super::volume::{MaskVolume, ProbVolume, Volume};
use crate::error::VolumeError;

/// Foreground where `p >= t`.
pub fn threshold_mask(prob: &ProbVolume, t: f32) -> MaskVolume {
    prob.map(|p| u8::from(p >= t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    /// Face neighbours.
    #[default]
    Six,
    /// Face, edge and corner neighbours.
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let n = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => n == 1,
                        Connectivity::TwentySix => n >= 1,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Component labels `1..=K` (0 is background) in x-fastest discovery order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub dims: [usize; 3],
    pub labels: Vec<u32>,
    /// `sizes[k - 1]` is the voxel count of label `k`.
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }
}

pub fn connected_components_3d(m: &MaskVolume, conn: Connectivity) -> Components {
    let dims = m.dims();
    let [nx, ny, nz] = dims.map(|d| d as isize);
    let offsets = conn.offsets();
    let mut labels = vec![0u32; m.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    let fg = m.voxels();
    for start in 0..fg.len() {
        if fg[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32 + 1;
        labels[start] = label;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let x = (i % dims[0]) as isize;
            let y = ((i / dims[0]) % dims[1]) as isize;
            let z = (i / (dims[0] * dims[1])) as isize;
            for &[dx, dy, dz] in &offsets {
                let (a, b, c) = (x + dx, y + dy, z + dz);
                if a < 0 || b < 0 || c < 0 || a >= nx || b >= ny || c >= nz {
                    continue;
                }
                let j = (a + nx * (b + ny * c)) as usize;
                if fg[j] != 0 && labels[j] == 0 {
                    labels[j] = label;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    Components { dims, labels, sizes }
}

/// Keeps only the largest component; ties go to the earliest-discovered one.
pub fn largest_component(m: &MaskVolume, conn: Connectivity) -> MaskVolume {
    let cc = connected_components_3d(m, conn);
    let mut best: Option<(u32, usize)> = None;
    for (k, &s) in cc.sizes.iter().enumerate() {
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((k as u32 + 1, s));
        }
    }
    let keep = best.map_or(0, |(l, _)| l);
    let voxels = cc.labels.iter().map(|&l| u8::from(keep != 0 && l == keep)).collect();
    Volume::new(m.dims(), m.spacing(), voxels).expect("same dims")
}

/// Axis-aligned box with inclusive corners, indexed `[x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bbox3 {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

impl Bbox3 {
    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| self.min[a] <= p[a] && p[a] <= self.max[a])
    }

    pub fn contains_z(&self, z: usize) -> bool {
        self.min[2] <= z && z <= self.max[2]
    }
}

pub fn bbox_of_mask(m: &MaskVolume) -> Result<Bbox3, VolumeError> {
    let [nx, ny, nz] = m.dims();
    let mut bb: Option<Bbox3> = None;
    let v = m.voxels();
    for z in 0..nz {
        for y in 0..ny {
            let row = &v[nx * (y + ny * z)..nx * (y + ny * z + 1)];
            let Some(first) = row.iter().position(|&a| a != 0) else {
                continue;
            };
            let last = row.iter().rposition(|&a| a != 0).expect("row has a voxel");
            let b = bb.get_or_insert(Bbox3 {
                min: [first, y, z],
                max: [last, y, z],
            });
            b.min = [b.min[0].min(first), b.min[1].min(y), b.min[2].min(z)];
            b.max = [b.max[0].max(last), b.max[1].max(y), b.max[2].max(z)];
        }
    }
    bb.ok_or(VolumeError::EmptyMask)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostprocessParams {
    pub liver_threshold: f32,
    pub lesion_threshold: f32,
    pub connectivity: Connectivity,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        Self {
            liver_threshold: 0.5,
            lesion_threshold: 0.3,
            connectivity: Connectivity::Six,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Postprocessed {
    pub liver: MaskVolume,
    /// `None` when no liver was found.
    pub bbox: Option<Bbox3>,
    pub lesion: MaskVolume,
}

/// Liver: largest component of the thresholded liver map. Lesion: thresholded
/// lesion map restricted to the liver bounding box.
pub fn hierarchical_postprocess(
    liver_prob: &ProbVolume,
    lesion_prob: &ProbVolume,
    params: &PostprocessParams,
) -> Result<Postprocessed, VolumeError> {
    liver_prob.check_same_dims(lesion_prob)?;
    let liver = largest_component(&threshold_mask(liver_prob, params.liver_threshold), params.connectivity);
    let bbox = match bbox_of_mask(&liver) {
        Ok(b) => Some(b),
        Err(VolumeError::EmptyMask) => None,
        Err(e) => return Err(e),
    };
    let mut lesion = threshold_mask(lesion_prob, params.lesion_threshold);
    let [nx, ny, nz] = lesion.dims();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if !bbox.is_some_and(|b| b.contains([x, y, z])) {
                    lesion.set(x, y, z, 0);
                }
            }
        }
    }
    Ok(Postprocessed { liver, bbox, lesion })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(dims: [usize; 3], on: &[[usize; 3]]) -> MaskVolume {
        let mut m = Volume::filled(dims, [1.0; 3], 0u8);
        for &[x, y, z] in on {
            m.set(x, y, z, 1);
        }
        m
    }

    #[test]
    fn threshold_is_inclusive() {
        let p = Volume::new([3, 1, 1], [1.0; 3], vec![0.4f32, 0.5, 0.6]).unwrap();
        assert_eq!(threshold_mask(&p, 0.5).voxels(), &[0, 1, 1]);
        assert_eq!(threshold_mask(&p, 0.0).voxels(), &[1, 1, 1]);
        let above_one = f32::from_bits(1.0f32.to_bits() + 1);
        assert_eq!(threshold_mask(&p, above_one).voxels(), &[0, 0, 0]);
    }

    #[test]
    fn edge_neighbours_split_under_six() {
        let m = mask([3, 3, 3], &[[0, 0, 0], [1, 1, 0], [2, 2, 1]]);
        assert_eq!(connected_components_3d(&m, Connectivity::Six).count(), 3);
        assert_eq!(connected_components_3d(&m, Connectivity::TwentySix).count(), 1);
        assert_eq!(Connectivity::Six.offsets().len(), 6);
        assert_eq!(Connectivity::TwentySix.offsets().len(), 26);
    }

    #[test]
    fn labels_follow_scan_order() {
        let m = mask([4, 1, 1], &[[0, 0, 0], [2, 0, 0], [3, 0, 0]]);
        let cc = connected_components_3d(&m, Connectivity::Six);
        assert_eq!(cc.labels, vec![1, 0, 2, 2]);
        assert_eq!(cc.sizes, vec![1, 2]);
    }

    #[test]
    fn largest_component_tie_break() {
        let m = mask([5, 1, 1], &[[0, 0, 0], [1, 0, 0], [3, 0, 0], [4, 0, 0]]);
        assert_eq!(largest_component(&m, Connectivity::Six).voxels(), &[1, 1, 0, 0, 0]);
        let m = mask([6, 1, 1], &[[0, 0, 0], [2, 0, 0], [3, 0, 0], [4, 0, 0]]);
        assert_eq!(largest_component(&m, Connectivity::Six).voxels(), &[0, 0, 1, 1, 1, 0]);
        let empty = mask([2, 2, 2], &[]);
        assert_eq!(largest_component(&empty, Connectivity::Six), empty);
    }

    #[test]
    fn bbox_cases() {
        let m = mask([4, 4, 4], &[[1, 2, 3]]);
        assert_eq!(bbox_of_mask(&m).unwrap(), Bbox3 { min: [1, 2, 3], max: [1, 2, 3] });
        let m = mask([4, 4, 4], &[[0, 0, 0], [3, 3, 3]]);
        assert_eq!(bbox_of_mask(&m).unwrap(), Bbox3 { min: [0; 3], max: [3; 3] });
        assert_eq!(bbox_of_mask(&mask([2, 2, 2], &[])), Err(VolumeError::EmptyMask));
    }

    #[test]
    fn lesion_votes_outside_box_are_erased() {
        let mut liver = Volume::filled([4, 4, 1], [1.0; 3], 0.0f32);
        liver.set(1, 1, 0, 0.9);
        liver.set(2, 1, 0, 0.9);
        let lesion = Volume::filled([4, 4, 1], [1.0; 3], 0.5f32);
        let out = hierarchical_postprocess(&liver, &lesion, &PostprocessParams::default()).unwrap();
        assert_eq!(out.lesion.count_nonzero(), 2);
        assert_eq!(out.lesion.get(1, 1, 0), 1);
        assert_eq!(out.lesion.get(2, 1, 0), 1);

        let none = Volume::filled([4, 4, 1], [1.0; 3], 0.0f32);
        let out = hierarchical_postprocess(&none, &lesion, &PostprocessParams::default()).unwrap();
        assert_eq!(out.bbox, None);
        assert_eq!(out.lesion.count_nonzero(), 0);
    }
}
