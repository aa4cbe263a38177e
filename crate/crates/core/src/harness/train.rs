//! SGD training of one stage and per-case evaluation on labelled volumes.

use std::time::Instant;

use super::config::{Stage, TrainConfig};
use super::data::{load_dataset, Case, SampleStream};
use super::report::MetricsReport;
use crate::checkpoint;
use crate::ct::preprocess::stack_adjacent_slices;
use crate::ct::{largest_component, threshold_mask, Bbox3, MaskVolume, ProbVolume, Volume};
use crate::error::Error;
use crate::loss::combined_loss_on_tape;
use crate::metrics::{dice_global, dice_per_case};
use crate::nn::FedNet;
use crate::param::{clip_grad_norm, sgd_step, ParamStore, SgdConfig};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Slices per forward pass during volume prediction.
const PREDICT_BATCH: usize = 8;

#[derive(Debug, Clone)]
pub struct Trained {
    pub net: FedNet,
    pub store: ParamStore<f32>,
    pub loss_curve: Vec<(usize, f64)>,
}

/// Runs `cfg.iterations` SGD steps on `cases` without touching the disk.
pub fn train_cases(cfg: &TrainConfig, cases: &[Case]) -> Result<Trained, Error> {
    cfg.validate()?;
    let (net, mut store) = FedNet::init::<f32>(cfg.stage_spec(), cfg.seed)?;
    let mut loss_curve = Vec::with_capacity(cfg.iterations);
    if cfg.iterations == 0 {
        return Ok(Trained { net, store, loss_curve });
    }
    let mut stream = SampleStream::new(cases, cfg)?;
    let sgd = cfg.sgd();
    for it in 0..cfg.iterations {
        let (x, y) = stream.next_batch(cfg.batch_size)?;
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let xv = tape.constant(x);
        let yv = tape.constant(y);
        let pred = net.forward(&mut tape, &p, xv)?;
        let loss = combined_loss_on_tape(&mut tape, pred, yv, &cfg.loss, cfg.jaccard_mode)?;
        let value = f64::from(tape.value(loss).data()[0]);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss(it));
        }
        loss_curve.push((it, value));
        let mut grads = tape.backward(loss)?;
        store.accumulate(&p, &mut grads);
        if cfg.grad_clip > 0.0 {
            clip_grad_norm(&mut store, cfg.grad_clip);
        }
        let lr = cfg.lr_schedule.lr_at(cfg.lr, it, cfg.iterations);
        sgd_step(&mut store, SgdConfig { lr, ..sgd });
    }
    Ok(Trained { net, store, loss_curve })
}

/// Loads `cfg.data_dir`, trains, writes the checkpoint and reports Dice on
/// the validation set when one is configured, otherwise on the training set.
pub fn train(cfg: &TrainConfig) -> Result<(Trained, MetricsReport), Error> {
    let start = Instant::now();
    let cases = load_dataset(&cfg.data_dir)?;
    let trained = train_cases(cfg, &cases)?;
    checkpoint::save(&trained.store, &cfg.checkpoint_out).map_err(|e| Error::from(e).at_path(&cfg.checkpoint_out))?;
    let eval_cases = match &cfg.val_dir {
        Some(dir) => load_dataset(dir)?,
        None => cases,
    };
    let mut report = evaluate_stage(cfg, &trained, &eval_cases)?;
    report.loss_curve = trained.loss_curve.clone();
    report.runtime_secs = start.elapsed().as_secs_f64();
    Ok((trained, report))
}

/// Probabilities for the slices where `slices[z]` is set; zero elsewhere.
/// With `bbox`, inputs outside its in-plane extent are zeroed first.
pub fn predict_volume(
    net: &FedNet,
    store: &ParamStore<f32>,
    image: &ProbVolume,
    slices: &[bool],
    bbox: Option<&Bbox3>,
) -> Result<ProbVolume, Error> {
    let [nx, ny, nz] = image.dims();
    let mut out = Volume::filled(image.dims(), image.spacing(), 0.0f32);
    let zs: Vec<usize> = (0..nz).filter(|&z| slices.get(z).copied().unwrap_or(false)).collect();
    for chunk in zs.chunks(PREDICT_BATCH) {
        let mut data = Vec::with_capacity(chunk.len() * 3 * nx * ny);
        for &z in chunk {
            let mut s = stack_adjacent_slices(image, z)?;
            if let Some(b) = bbox {
                zero_outside(&mut s, b);
            }
            data.extend_from_slice(s.data());
        }
        let x = Tensor::new(vec![chunk.len(), 3, ny, nx], data)?;
        let p = net.predict(store, x)?;
        for (k, &z) in chunk.iter().enumerate() {
            out.slice_mut(z)?
                .copy_from_slice(&p.data()[k * nx * ny..(k + 1) * nx * ny]);
        }
    }
    Ok(out)
}

fn zero_outside(t: &mut Tensor<f32>, b: &Bbox3) {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    for (i, v) in t.data_mut().iter_mut().enumerate() {
        let p = i % (h * w);
        let (y, x) = (p / w, p % w);
        if !(b.min[1] <= y && y <= b.max[1] && b.min[0] <= x && x <= b.max[0]) {
            *v = 0.0;
        }
    }
}

/// Binary prediction of one stage on a labelled case.
///
/// Liver: threshold plus largest component over every slice. Lesion:
/// threshold over the slices that contain ground-truth liver.
pub fn predict_stage_mask(cfg: &TrainConfig, trained: &Trained, case: &Case) -> Result<MaskVolume, Error> {
    let nz = case.image.dims()[2];
    let slices = case.eligible(cfg.stage).unwrap_or_else(|| vec![true; nz]);
    let bbox = if cfg.crop_to_liver_bbox && cfg.stage == Stage::Lesion {
        case.liver_bbox()
    } else {
        None
    };
    let prob = predict_volume(&trained.net, &trained.store, &case.image, &slices, bbox.as_ref())?;
    Ok(match cfg.stage {
        Stage::Liver => largest_component(
            &threshold_mask(&prob, cfg.postprocess.liver_threshold),
            cfg.postprocess.connectivity,
        ),
        Stage::Lesion => threshold_mask(&prob, cfg.postprocess.lesion_threshold),
    })
}

pub fn evaluate_stage(cfg: &TrainConfig, trained: &Trained, cases: &[Case]) -> Result<MetricsReport, Error> {
    let mut pairs = Vec::with_capacity(cases.len());
    let mut per = Vec::with_capacity(cases.len());
    for case in cases {
        let pred = predict_stage_mask(cfg, trained, case)?;
        let gt = case.target(cfg.stage);
        per.push((case.name.clone(), crate::metrics::dice(pred.voxels(), gt.voxels())?));
        pairs.push((pred.into_voxels(), gt.into_voxels()));
    }
    Ok(MetricsReport {
        per_case_dice: dice_per_case(&pairs)?,
        global_dice: dice_global(&pairs)?,
        cases: per,
        ..MetricsReport::default()
    })
}
