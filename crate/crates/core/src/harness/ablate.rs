//! The six-row component ablation, trained and scored at toy scale.

use std::fmt::Write;

use super::config::{Stage, TrainConfig};
use super::data::Case;
use super::train::{evaluate_stage, train_cases};
use crate::error::Error;
use crate::nn::NetworkSpec;

/// `(label, rcb, ff, se, duc)`.
pub const ABLATION_ROWS: [(&str, bool, bool, bool, bool); 6] = [
    ("Baseline", false, false, false, false),
    ("Baseline + RCB", true, false, false, false),
    ("Baseline + FF", false, true, false, false),
    ("Baseline + FF with SE-Block", false, true, true, false),
    ("Baseline + DUC", false, false, false, true),
    ("Baseline + RCB + FF + DUC", true, true, true, true),
];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: &'static str,
    pub spec: NetworkSpec,
    pub per_case_dice: f64,
    pub global_dice: f64,
}

/// Trains the lesion stage once per row with everything but the component
/// switches held fixed, and scores each on `eval`.
pub fn ablate(base: &TrainConfig, train: &[Case], eval: &[Case]) -> Result<Vec<AblationRow>, Error> {
    let mut rows = Vec::with_capacity(ABLATION_ROWS.len());
    for (label, rcb, ff, se, duc) in ABLATION_ROWS {
        let mut cfg = base.clone();
        cfg.stage = Stage::Lesion;
        cfg.spec = NetworkSpec {
            enable_rcb: rcb,
            enable_ff: ff,
            enable_se: se,
            enable_duc: duc,
            ..base.spec
        };
        let trained = train_cases(&cfg, train)?;
        let report = evaluate_stage(&cfg, &trained, eval)?;
        rows.push(AblationRow {
            label,
            spec: cfg.spec,
            per_case_dice: report.per_case_dice,
            global_dice: report.global_dice,
        });
    }
    Ok(rows)
}

pub fn render_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("model\tper_case_dice\tglobal_dice\n");
    for r in rows {
        writeln!(s, "{}\t{:.4}\t{:.4}", r.label, r.per_case_dice, r.global_dice).unwrap();
    }
    s
}
