//! Synthetic abdominal phantoms: one ellipsoidal liver with up to three
//! spherical lesions on a noisy background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::volume::{CtVolume, MaskVolume, Volume};
use crate::error::VolumeError;

pub const MIN_EXTENT: usize = 32;

pub const LABEL_LIVER: u8 = 1;
pub const LABEL_LESION: u8 = 2;

/// Mean and standard deviation of a tissue class in HU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tissue {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub background: Tissue,
    pub liver: Tissue,
    pub lesion: Tissue,
    pub max_lesions: usize,
    /// Lesion radius range as a fraction of the smallest extent.
    pub lesion_radius: (f64, f64),
    /// Width of the liver boundary blend, in units of the normalised radius.
    pub edge_softness: f64,
    /// Noise is truncated at this many standard deviations.
    pub noise_clip: f64,
    pub spacing: [f32; 3],
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            background: Tissue { mean: -100.0, std: 30.0 },
            liver: Tissue { mean: 60.0, std: 20.0 },
            lesion: Tissue { mean: 20.0, std: 10.0 },
            max_lesions: 3,
            lesion_radius: (0.09, 0.15),
            edge_softness: 0.04,
            noise_clip: 4.0,
            spacing: [0.8, 0.8, 2.5],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    center: [f64; 3],
    axes: [f64; 3],
}

impl Ellipsoid {
    /// Normalised radius: 1 on the surface.
    fn radius(&self, p: [f64; 3]) -> f64 {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.axes[a]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy)]
struct Sphere {
    center: [f64; 3],
    radius: f64,
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn clipped_noise(rng: &mut ChaCha8Rng, clip: f64) -> f64 {
    let n = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
    n.sample(rng).clamp(-clip, clip)
}

/// One phantom and its label volume (0 background, 1 liver, 2 lesion).
pub fn synth_volume(rng: &mut ChaCha8Rng, dims: [usize; 3], params: &SynthParams) -> Result<(CtVolume, MaskVolume), VolumeError> {
    if dims.iter().any(|&d| d < MIN_EXTENT) {
        return Err(VolumeError::TooSmall { dims, min: MIN_EXTENT });
    }
    let d = dims.map(|v| v as f64);
    let liver = Ellipsoid {
        center: [0, 1, 2].map(|a| d[a] * rng.gen_range(0.45..0.55)),
        axes: [
            d[0] * rng.gen_range(0.26..0.34),
            d[1] * rng.gen_range(0.24..0.32),
            d[2] * rng.gen_range(0.30..0.38),
        ],
    };

    let min_extent = d.iter().copied().fold(f64::INFINITY, f64::min);
    let n_lesions = rng.gen_range(0..=params.max_lesions);
    let mut lesions = Vec::with_capacity(n_lesions);
    for _ in 0..n_lesions {
        let radius = min_extent * rng.gen_range(params.lesion_radius.0..params.lesion_radius.1);
        // Rejection-sample a centre whose whole sphere sits well inside the liver.
        for _ in 0..200 {
            let center = [0, 1, 2].map(|a| liver.center[a] + liver.axes[a] * rng.gen_range(-0.7..0.7));
            let margin = (0..3).map(|a| radius / liver.axes[a]).fold(0.0, f64::max);
            if liver.radius(center) + margin <= 0.85 {
                lesions.push(Sphere { center, radius });
                break;
            }
        }
    }

    let n: usize = dims.iter().product();
    let mut hu = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let p = [x as f64, y as f64, z as f64];
                let r = liver.radius(p);
                let in_liver = r <= 1.0;
                let w_liver = logistic((1.0 - r) / params.edge_softness);
                let lesion_depth = lesions
                    .iter()
                    .map(|s| s.radius - (0..3).map(|a| (p[a] - s.center[a]).powi(2)).sum::<f64>().sqrt())
                    .fold(f64::NEG_INFINITY, f64::max);
                let in_lesion = lesion_depth >= 0.0;
                let w_lesion = if lesions.is_empty() { 0.0 } else { logistic(lesion_depth / 0.5) };

                let tissue_mean = params.liver.mean * (1.0 - w_lesion) + params.lesion.mean * w_lesion;
                let tissue_std = params.liver.std * (1.0 - w_lesion) + params.lesion.std * w_lesion;
                let mean = params.background.mean * (1.0 - w_liver) + tissue_mean * w_liver;
                let std = params.background.std * (1.0 - w_liver) + tissue_std * w_liver;
                let v = mean + std * clipped_noise(rng, params.noise_clip);
                hu.push(v.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16);
                labels.push(match (in_liver, in_lesion) {
                    (true, true) => LABEL_LESION,
                    (true, false) => LABEL_LIVER,
                    _ => 0,
                });
            }
        }
    }
    Ok((
        Volume::new(dims, params.spacing, hu)?,
        Volume::new(dims, params.spacing, labels)?,
    ))
}

/// `n` phantoms drawn from one seeded stream.
pub fn synth_generate(
    seed: u64,
    n: usize,
    dims: [usize; 3],
    params: &SynthParams,
) -> Result<Vec<(CtVolume, MaskVolume)>, VolumeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| synth_volume(&mut rng, dims, params)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_dims() {
        assert_eq!(
            synth_generate(0, 1, [32, 31, 32], &SynthParams::default()),
            Err(VolumeError::TooSmall { dims: [32, 31, 32], min: 32 })
        );
    }

    #[test]
    fn lesions_inside_liver_and_deterministic() {
        let a = synth_generate(5, 3, [32, 32, 32], &SynthParams::default()).unwrap();
        let b = synth_generate(5, 3, [32, 32, 32], &SynthParams::default()).unwrap();
        assert_eq!(a, b);
        for (_, m) in &a {
            assert!(m.count_nonzero() > 0);
            assert!(m.voxels().iter().all(|&v| v <= LABEL_LESION));
        }
    }
}
