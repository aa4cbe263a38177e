use std::path::Path;

use super::data::{list_mvol, pair_files};
use super::report::MetricsReport;
use crate::ct::{read_mvol_as, MaskVolume};
use crate::error::Error;
use crate::metrics::{dice, dice_global, dice_per_case};

/// Dice of every prediction in `pred_dir` against the same-named file in
/// `gt_dir`. Predictions are foreground where non-zero; ground truth where it
/// equals `gt_label`, or where non-zero when no label is given.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, gt_label: Option<u8>) -> Result<MetricsReport, Error> {
    let pairs = pair_files(&list_mvol(pred_dir)?, &list_mvol(gt_dir)?)?;
    if pairs.is_empty() {
        return Err(Error::NoData(pred_dir.to_path_buf()));
    }
    let mut masks = Vec::with_capacity(pairs.len());
    let mut cases = Vec::with_capacity(pairs.len());
    for (name, p, g) in pairs {
        let pred: MaskVolume = read_mvol_as(&p)?;
        let gt: MaskVolume = read_mvol_as(&g)?;
        pred.check_same_dims(&gt).map_err(|e| Error::from(e).at_path(&p))?;
        let gt = match gt_label {
            Some(l) => gt.select_label(l, false),
            None => gt.select_label(1, true),
        };
        cases.push((name, dice(pred.voxels(), gt.voxels())?));
        masks.push((pred.into_voxels(), gt.into_voxels()));
    }
    Ok(MetricsReport {
        per_case_dice: dice_per_case(&masks)?,
        global_dice: dice_global(&masks)?,
        cases,
        ..MetricsReport::default()
    })
}
