//! Paired volume datasets and the training batch stream.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Stage, TrainConfig};
use crate::ct::preprocess::{flip_augment, sample_slice_indices, SliceSample};
use crate::ct::{bbox_of_mask, hu_window_normalize, read_mvol_as, Bbox3, CtVolume, MaskVolume, ProbVolume};
use crate::error::Error;
use crate::tensor::Tensor;

pub const CT_SUBDIR: &str = "ct";
pub const LABEL_SUBDIR: &str = "labels";

/// One labelled volume, already windowed to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Case {
    pub name: String,
    pub image: ProbVolume,
    /// 0 background, 1 liver, 2 lesion.
    pub labels: MaskVolume,
}

impl Case {
    pub fn new(name: impl Into<String>, ct: &CtVolume, labels: MaskVolume) -> Result<Self, Error> {
        ct.check_same_dims(&labels)?;
        Ok(Self {
            name: name.into(),
            image: hu_window_normalize(ct),
            labels,
        })
    }

    /// Liver stage: label >= 1. Lesion stage: label == 2.
    pub fn target(&self, stage: Stage) -> MaskVolume {
        match stage {
            Stage::Liver => self.labels.select_label(1, true),
            Stage::Lesion => self.labels.select_label(2, false),
        }
    }

    /// Slices the stage trains and is evaluated on: every slice for the
    /// liver, slices that contain liver for lesions.
    pub fn eligible(&self, stage: Stage) -> Option<Vec<bool>> {
        match stage {
            Stage::Liver => None,
            Stage::Lesion => Some(slices_with_foreground(&self.labels)),
        }
    }

    pub fn liver_bbox(&self) -> Option<Bbox3> {
        bbox_of_mask(&self.labels.select_label(1, true)).ok()
    }
}

pub fn slices_with_foreground(m: &MaskVolume) -> Vec<bool> {
    (0..m.dims()[2])
        .map(|z| m.slice(z).expect("z < nz").iter().any(|&v| v != 0))
        .collect()
}

/// `*.mvol` files in `dir`, keyed by file name.
pub fn list_mvol(dir: &Path) -> Result<BTreeMap<String, PathBuf>, Error> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::from(e).at_path(dir))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::from(e).at_path(dir))?.path();
        if path.extension().is_some_and(|e| e == "mvol") && path.is_file() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                out.insert(name.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Pairs `a` and `b` by file name; any file without a partner is an error.
pub fn pair_files(
    a: &BTreeMap<String, PathBuf>,
    b: &BTreeMap<String, PathBuf>,
) -> Result<Vec<(String, PathBuf, PathBuf)>, Error> {
    if let Some((_, p)) = a.iter().find(|(k, _)| !b.contains_key(*k)) {
        return Err(Error::Unpaired(p.clone()));
    }
    if let Some((_, p)) = b.iter().find(|(k, _)| !a.contains_key(*k)) {
        return Err(Error::Unpaired(p.clone()));
    }
    Ok(a.iter().map(|(k, p)| (k.clone(), p.clone(), b[k].clone())).collect())
}

/// Loads `dir/ct/*.mvol` with labels from `dir/labels/` in file-name order.
pub fn load_dataset(dir: &Path) -> Result<Vec<Case>, Error> {
    let cts = list_mvol(&dir.join(CT_SUBDIR))?;
    let labels = list_mvol(&dir.join(LABEL_SUBDIR))?;
    let pairs = pair_files(&cts, &labels)?;
    if pairs.is_empty() {
        return Err(Error::NoData(dir.to_path_buf()));
    }
    pairs
        .into_iter()
        .map(|(name, ct, lab)| {
            let ct_vol: CtVolume = read_mvol_as(&ct)?;
            let lab_vol: MaskVolume = read_mvol_as(&lab)?;
            Case::new(name, &ct_vol, lab_vol).map_err(|e| e.at_path(&lab))
        })
        .collect()
}

/// Endless, seeded stream of augmented slice samples, cycling over the cases
/// in order. Each pass draws fresh Bernoulli trials for every slice.
pub struct SampleStream<'a> {
    cases: &'a [Case],
    stage: Stage,
    cfg: &'a TrainConfig,
    targets: Vec<MaskVolume>,
    eligible: Vec<Option<Vec<bool>>>,
    boxes: Vec<Option<Bbox3>>,
    sample_rng: ChaCha8Rng,
    flip_rng: ChaCha8Rng,
    shuffle_rng: ChaCha8Rng,
    case: usize,
    pending: Vec<SliceSample>,
    buffer: Vec<SliceSample>,
    empty_passes: usize,
}

/// Consecutive passes over every case that may yield nothing before the
/// stream gives up.
const MAX_EMPTY_PASSES: usize = 64;

impl<'a> SampleStream<'a> {
    pub fn new(cases: &'a [Case], cfg: &'a TrainConfig) -> Result<Self, Error> {
        if cases.is_empty() {
            return Err(Error::NoData(cfg.data_dir.clone()));
        }
        let stage = cfg.stage;
        let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
        let crop = cfg.crop_to_liver_bbox && stage == Stage::Lesion;
        Ok(Self {
            cases,
            stage,
            cfg,
            targets: cases.iter().map(|c| c.target(stage)).collect(),
            eligible: cases.iter().map(|c| c.eligible(stage)).collect(),
            boxes: cases.iter().map(|c| if crop { c.liver_bbox() } else { None }).collect(),
            sample_rng: ChaCha8Rng::seed_from_u64(master.gen()),
            flip_rng: ChaCha8Rng::seed_from_u64(master.gen()),
            shuffle_rng: ChaCha8Rng::seed_from_u64(master.gen()),
            case: 0,
            pending: Vec::new(),
            buffer: Vec::new(),
            empty_passes: 0,
        })
    }

    fn refill(&mut self) -> Result<(), Error> {
        let mut scanned = 0;
        while self.pending.is_empty() {
            let i = self.case;
            self.case = (self.case + 1) % self.cases.len();
            scanned += 1;
            let kept = sample_slice_indices(
                &self.targets[i],
                self.eligible[i].as_deref(),
                self.cfg.sampling,
                &mut self.sample_rng,
            );
            for &z in kept.iter().rev() {
                let mut s = SliceSample::build(&self.cases[i].image, &self.targets[i], z)?;
                if let Some(b) = &self.boxes[i] {
                    s.mask_outside(b);
                }
                self.pending.push(s);
            }
            if scanned == self.cases.len() {
                scanned = 0;
                if self.pending.is_empty() {
                    self.empty_passes += 1;
                    if self.empty_passes >= MAX_EMPTY_PASSES {
                        return Err(Error::NoData(self.cfg.data_dir.clone()));
                    }
                }
            }
        }
        self.empty_passes = 0;
        Ok(())
    }

    fn next_raw(&mut self) -> Result<SliceSample, Error> {
        if self.pending.is_empty() {
            self.refill()?;
        }
        Ok(self.pending.pop().expect("refilled"))
    }

    pub fn next_sample(&mut self) -> Result<SliceSample, Error> {
        let mut s = if self.cfg.shuffle_buffer == 0 {
            self.next_raw()?
        } else {
            while self.buffer.len() < self.cfg.shuffle_buffer {
                let s = self.next_raw()?;
                self.buffer.push(s);
            }
            let k = self.shuffle_rng.gen_range(0..self.buffer.len());
            self.buffer.swap_remove(k)
        };
        flip_augment(&mut s, &mut self.flip_rng);
        Ok(s)
    }

    /// `x: [b, 3, h, w]`, `y: [b, 1, h, w]`.
    pub fn next_batch(&mut self, b: usize) -> Result<(Tensor<f32>, Tensor<f32>), Error> {
        let samples = (0..b).map(|_| self.next_sample()).collect::<Result<Vec<_>, _>>()?;
        stack_batch(&samples)
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }
}

pub fn stack_batch(samples: &[SliceSample]) -> Result<(Tensor<f32>, Tensor<f32>), Error> {
    let first = &samples[0];
    let (h, w) = (first.image.shape()[1], first.image.shape()[2]);
    let mut xs = Vec::with_capacity(samples.len() * 3 * h * w);
    let mut ys = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if s.image.shape() != first.image.shape() {
            return Err(crate::error::TensorError::InvalidArgument {
                op: "batch",
                msg: format!("slice shapes differ: {:?} vs {:?}", s.image.shape(), first.image.shape()),
            }
            .into());
        }
        xs.extend_from_slice(s.image.data());
        ys.extend_from_slice(s.target.data());
    }
    let n = samples.len();
    Ok((Tensor::new(vec![n, 3, h, w], xs)?, Tensor::new(vec![n, 1, h, w], ys)?))
}
