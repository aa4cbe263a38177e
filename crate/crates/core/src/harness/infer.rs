//! Two-stage inference: liver network, then lesion network on liver slices,
//! then bounding-box post-processing.

use std::path::Path;

use super::config::TrainConfig;
use super::data::slices_with_foreground;
use super::train::predict_volume;
use crate::checkpoint;
use crate::ct::{
    bbox_of_mask, hierarchical_postprocess, hu_window_normalize, largest_component, threshold_mask, CtVolume,
    Postprocessed,
};
use crate::error::Error;
use crate::nn::FedNet;
use crate::param::ParamStore;

/// A network and its weights.
#[derive(Debug, Clone)]
pub struct Model {
    pub net: FedNet,
    pub store: ParamStore<f32>,
}

impl Model {
    pub fn load(spec: crate::nn::NetworkSpec, path: &Path) -> Result<Self, Error> {
        let (net, mut store) = FedNet::init::<f32>(spec, 0)?;
        checkpoint::load_into(&mut store, path).map_err(|e| Error::from(e).at_path(path))?;
        Ok(Self { net, store })
    }
}

#[derive(Debug, Clone)]
pub struct StagePair {
    pub liver: Model,
    pub lesion: Model,
}

impl StagePair {
    /// The liver checkpoint is read against the baseline of `cfg.spec`, the
    /// lesion checkpoint against `cfg.spec` itself.
    pub fn load(cfg: &TrainConfig, liver: &Path, lesion: &Path) -> Result<Self, Error> {
        Ok(Self {
            liver: Model::load(cfg.spec.baseline(), liver)?,
            lesion: Model::load(cfg.spec, lesion)?,
        })
    }
}

pub fn infer_volume(models: &StagePair, cfg: &TrainConfig, ct: &CtVolume) -> Result<Postprocessed, Error> {
    let image = hu_window_normalize(ct);
    let nz = image.dims()[2];
    let pp = &cfg.postprocess;

    let liver_prob = predict_volume(&models.liver.net, &models.liver.store, &image, &vec![true; nz], None)?;
    let liver = largest_component(&threshold_mask(&liver_prob, pp.liver_threshold), pp.connectivity);
    let slices = slices_with_foreground(&liver);
    let bbox = if cfg.crop_to_liver_bbox {
        bbox_of_mask(&liver).ok()
    } else {
        None
    };
    let lesion_prob = predict_volume(&models.lesion.net, &models.lesion.store, &image, &slices, bbox.as_ref())?;
    Ok(hierarchical_postprocess(&liver_prob, &lesion_prob, pp)?)
}
