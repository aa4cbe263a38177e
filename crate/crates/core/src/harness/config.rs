//! `key = value` text configuration. `#` starts a comment; blank lines are
//! ignored; unknown keys are errors; missing keys keep their defaults.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::ct::{Connectivity, PostprocessParams, SamplingParams};
use crate::error::{ConfigError, Error};
use crate::loss::{JaccardMode, LossWeights};
use crate::nn::NetworkSpec;
use crate::param::{SgdConfig, WeightInit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stage {
    Liver,
    #[default]
    Lesion,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Liver => "liver",
            Stage::Lesion => "lesion",
        }
    }
}

/// Learning-rate schedule over the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from `lr` at the first iteration to 0 after the last.
    Cosine,
}

impl LrSchedule {
    pub fn name(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }

    /// Learning rate for iteration `it` of `total`.
    pub fn lr_at(self, base: f64, it: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = it as f64 / total.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub spec: NetworkSpec,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub loss: LossWeights,
    pub jaccard_mode: JaccardMode,
    pub data_dir: PathBuf,
    pub val_dir: Option<PathBuf>,
    pub checkpoint_out: PathBuf,
    pub sampling: SamplingParams,
    pub postprocess: PostprocessParams,
    pub crop_to_liver_bbox: bool,
    /// 0 keeps the sampled stream order.
    pub shuffle_buffer: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::Lesion,
            spec: NetworkSpec::default(),
            lr: 0.05,
            lr_schedule: LrSchedule::Constant,
            momentum: 0.9,
            weight_decay: 1e-4,
            grad_clip: 0.0,
            batch_size: 4,
            iterations: 300,
            seed: 0,
            loss: LossWeights::default(),
            jaccard_mode: JaccardMode::PerSlice,
            data_dir: PathBuf::from("data"),
            val_dir: None,
            checkpoint_out: PathBuf::from("model.ckpt"),
            sampling: SamplingParams::default(),
            postprocess: PostprocessParams::default(),
            crop_to_liver_bbox: false,
            shuffle_buffer: 0,
        }
    }
}

/// Every recognised key, in the order `render` writes them.
pub const KEYS: &[&str] = &[
    "stage",
    "in_channels",
    "base_channels",
    "se_reduction",
    "enable_rcb",
    "enable_ff",
    "enable_se",
    "enable_duc",
    "head_factor",
    "weight_init",
    "lr",
    "lr_schedule",
    "momentum",
    "weight_decay",
    "grad_clip",
    "batch_size",
    "iterations",
    "seed",
    "omega1",
    "omega2",
    "epsilon",
    "clamp_delta",
    "jaccard_mode",
    "data_dir",
    "val_dir",
    "checkpoint_out",
    "p_pos",
    "p_neg",
    "liver_threshold",
    "lesion_threshold",
    "connectivity",
    "crop_to_liver_bbox",
    "shuffle_buffer",
];

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

fn parse_num<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| e.to_string())
}

/// Raw loss fields, validated together once parsing is done.
#[derive(Debug, Clone, Copy)]
struct LossFields {
    omega1: f64,
    omega2: f64,
    epsilon: f64,
    clamp_delta: f64,
}

impl TrainConfig {
    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = TrainConfig::default();
        let d = cfg.loss;
        let mut loss = LossFields {
            omega1: d.omega1(),
            omega2: d.omega2(),
            epsilon: d.epsilon(),
            clamp_delta: d.clamp_delta(),
        };
        let mut lines: Vec<Option<usize>> = vec![None; KEYS.len()];

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            let Some(slot) = KEYS.iter().position(|k| *k == key) else {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            };
            if lines[slot].is_some() {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
            lines[slot] = Some(line);
            cfg.set(key, value, &mut loss).map_err(|reason| ConfigError::BadValue {
                line,
                key: key.to_string(),
                value: value.to_string(),
                reason,
            })?;
        }

        let line_of = |k: &str| KEYS.iter().position(|x| *x == k).and_then(|i| lines[i]);
        cfg.loss = LossWeights::new(loss.omega1, loss.omega2, loss.epsilon, loss.clamp_delta).map_err(|e| {
            let key = if !(loss.omega1 > 0.0 && loss.omega1 < 1.0) {
                "omega1"
            } else if loss.omega2.is_nan() || loss.omega2 < 0.0 {
                "omega2"
            } else if loss.epsilon.is_nan() || loss.epsilon <= 0.0 {
                "epsilon"
            } else {
                "clamp_delta"
            };
            ConfigError::Invalid {
                key,
                reason: e.to_string(),
                line: line_of(key),
            }
        })?;
        cfg.validate_with(&line_of)?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
        Self::parse_str(&text).map_err(|e| Error::from(e).at_path(path))
    }

    fn set(&mut self, key: &str, v: &str, loss: &mut LossFields) -> Result<(), String> {
        match key {
            "stage" => {
                self.stage = match v {
                    "liver" => Stage::Liver,
                    "lesion" => Stage::Lesion,
                    _ => return Err("expected liver or lesion".into()),
                }
            }
            "in_channels" => self.spec.in_channels = parse_num(v)?,
            "base_channels" => self.spec.base_channels = parse_num(v)?,
            "se_reduction" => self.spec.se_reduction = parse_num(v)?,
            "enable_rcb" => self.spec.enable_rcb = parse_bool(v)?,
            "enable_ff" => self.spec.enable_ff = parse_bool(v)?,
            "enable_se" => self.spec.enable_se = parse_bool(v)?,
            "enable_duc" => self.spec.enable_duc = parse_bool(v)?,
            "head_factor" => self.spec.head_factor = parse_num(v)?,
            "weight_init" => {
                self.spec.weight_init = match v {
                    "glorot" => WeightInit::Glorot,
                    "he" => WeightInit::He,
                    _ => return Err("expected glorot or he".into()),
                }
            }
            "lr" => self.lr = parse_num(v)?,
            "lr_schedule" => {
                self.lr_schedule = match v {
                    "constant" => LrSchedule::Constant,
                    "cosine" => LrSchedule::Cosine,
                    _ => return Err("expected constant or cosine".into()),
                }
            }
            "momentum" => self.momentum = parse_num(v)?,
            "weight_decay" => self.weight_decay = parse_num(v)?,
            "grad_clip" => self.grad_clip = parse_num(v)?,
            "batch_size" => self.batch_size = parse_num(v)?,
            "iterations" => self.iterations = parse_num(v)?,
            "seed" => self.seed = parse_num(v)?,
            "omega1" => loss.omega1 = parse_num(v)?,
            "omega2" => loss.omega2 = parse_num(v)?,
            "epsilon" => loss.epsilon = parse_num(v)?,
            "clamp_delta" => loss.clamp_delta = parse_num(v)?,
            "jaccard_mode" => {
                self.jaccard_mode = match v {
                    "per_slice" => JaccardMode::PerSlice,
                    "pooled" => JaccardMode::Pooled,
                    _ => return Err("expected per_slice or pooled".into()),
                }
            }
            "data_dir" => self.data_dir = PathBuf::from(v),
            "val_dir" => self.val_dir = Some(PathBuf::from(v)),
            "checkpoint_out" => self.checkpoint_out = PathBuf::from(v),
            "p_pos" => self.sampling.p_pos = parse_num(v)?,
            "p_neg" => self.sampling.p_neg = parse_num(v)?,
            "liver_threshold" => self.postprocess.liver_threshold = parse_num(v)?,
            "lesion_threshold" => self.postprocess.lesion_threshold = parse_num(v)?,
            "connectivity" => {
                self.postprocess.connectivity = match v {
                    "6" => Connectivity::Six,
                    "26" => Connectivity::TwentySix,
                    _ => return Err("expected 6 or 26".into()),
                }
            }
            "crop_to_liver_bbox" => self.crop_to_liver_bbox = parse_bool(v)?,
            "shuffle_buffer" => self.shuffle_buffer = parse_num(v)?,
            _ => unreachable!("key list and setter disagree on `{key}`"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_with(&|_| None)
    }

    fn validate_with(&self, line_of: &dyn Fn(&str) -> Option<usize>) -> Result<(), ConfigError> {
        let fail = |key: &'static str, reason: String| {
            Err(ConfigError::Invalid {
                key,
                reason,
                line: line_of(key),
            })
        };
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr", "must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum", "must lie in [0, 1)".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail("weight_decay", "must be non-negative".into());
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return fail("grad_clip", "must be non-negative".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size", "must be at least 1".into());
        }
        for (key, p) in [("p_pos", self.sampling.p_pos), ("p_neg", self.sampling.p_neg)] {
            if !(0.0..=1.0).contains(&p) {
                return fail(key, "must lie in [0, 1]".into());
            }
        }
        for (key, t) in [
            ("liver_threshold", self.postprocess.liver_threshold),
            ("lesion_threshold", self.postprocess.lesion_threshold),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return fail(key, "must lie in [0, 1]".into());
            }
        }
        for (key, p) in [("data_dir", &self.data_dir), ("checkpoint_out", &self.checkpoint_out)] {
            if p.as_os_str().is_empty() {
                return fail(key, "path must not be empty".into());
            }
        }
        if self.val_dir.as_ref().is_some_and(|p| p.as_os_str().is_empty()) {
            return fail("val_dir", "path must not be empty".into());
        }
        if let Err(e) = self.stage_spec().validate() {
            let key = if self.spec.head_factor != crate::nn::network::STEM_STRIDE {
                "head_factor"
            } else if self.spec.base_channels < 2 {
                "base_channels"
            } else if self.spec.in_channels == 0 {
                "in_channels"
            } else {
                "se_reduction"
            };
            return fail(key, e.to_string());
        }
        Ok(())
    }

    /// The architecture trained by this stage: the baseline for the liver,
    /// the configured network for lesions.
    pub fn stage_spec(&self) -> NetworkSpec {
        match self.stage {
            Stage::Liver => self.spec.baseline(),
            Stage::Lesion => self.spec,
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    /// Writes the configuration back in the parseable format.
    pub fn render(&self) -> String {
        let s = &self.spec;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("stage", self.stage.name().into());
        kv("in_channels", s.in_channels.to_string());
        kv("base_channels", s.base_channels.to_string());
        kv("se_reduction", s.se_reduction.to_string());
        kv("enable_rcb", s.enable_rcb.to_string());
        kv("enable_ff", s.enable_ff.to_string());
        kv("enable_se", s.enable_se.to_string());
        kv("enable_duc", s.enable_duc.to_string());
        kv("head_factor", s.head_factor.to_string());
        kv("weight_init", s.weight_init.name().into());
        kv("lr", self.lr.to_string());
        kv("lr_schedule", self.lr_schedule.name().into());
        kv("momentum", self.momentum.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("grad_clip", self.grad_clip.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("iterations", self.iterations.to_string());
        kv("seed", self.seed.to_string());
        kv("omega1", self.loss.omega1().to_string());
        kv("omega2", self.loss.omega2().to_string());
        kv("epsilon", self.loss.epsilon().to_string());
        kv("clamp_delta", self.loss.clamp_delta().to_string());
        kv(
            "jaccard_mode",
            match self.jaccard_mode {
                JaccardMode::PerSlice => "per_slice",
                JaccardMode::Pooled => "pooled",
            }
            .into(),
        );
        kv("data_dir", self.data_dir.display().to_string());
        if let Some(v) = &self.val_dir {
            kv("val_dir", v.display().to_string());
        }
        kv("checkpoint_out", self.checkpoint_out.display().to_string());
        kv("p_pos", self.sampling.p_pos.to_string());
        kv("p_neg", self.sampling.p_neg.to_string());
        kv("liver_threshold", self.postprocess.liver_threshold.to_string());
        kv("lesion_threshold", self.postprocess.lesion_threshold.to_string());
        kv(
            "connectivity",
            match self.postprocess.connectivity {
                Connectivity::Six => "6",
                Connectivity::TwentySix => "26",
            }
            .into(),
        );
        kv("crop_to_liver_bbox", self.crop_to_liver_bbox.to_string());
        kv("shuffle_buffer", self.shuffle_buffer.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(TrainConfig::parse_str("").unwrap(), TrainConfig::default());
        assert_eq!(TrainConfig::parse_str("# only a comment\n\n").unwrap(), TrainConfig::default());
    }

    #[test]
    fn parses_values_and_comments() {
        let c = TrainConfig::parse_str("momentum = 0.9\nlr = 0.01  # smaller\nstage = liver\nconnectivity = 26\n").unwrap();
        assert_eq!(c.momentum, 0.9);
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.stage, Stage::Liver);
        assert_eq!(c.postprocess.connectivity, Connectivity::TwentySix);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = TrainConfig::parse_str("\nlr = banana\n").unwrap_err();
        assert!(matches!(e, ConfigError::BadValue { line: 2, .. }), "{e}");
        let e = TrainConfig::parse_str("learning_rate = 1").unwrap_err();
        assert!(matches!(e, ConfigError::UnknownKey { line: 1, .. }));
        let e = TrainConfig::parse_str("lr = 1\nlr = 2").unwrap_err();
        assert!(matches!(e, ConfigError::Duplicate { line: 2, .. }));
        let e = TrainConfig::parse_str("seed 3").unwrap_err();
        assert!(matches!(e, ConfigError::Syntax { line: 1 }));
        let e = TrainConfig::parse_str("\n\nlr = -1").unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { key: "lr", line: Some(3), .. }), "{e}");
        let e = TrainConfig::parse_str("omega1 = 1.5").unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { key: "omega1", line: Some(1), .. }), "{e}");
        let e = TrainConfig::parse_str("batch_size = 0").unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { key: "batch_size", .. }));
    }

    #[test]
    fn render_round_trips() {
        let d = TrainConfig::default();
        let c = TrainConfig {
            lr: 0.125,
            val_dir: Some("val".into()),
            spec: NetworkSpec { enable_se: false, ..d.spec },
            ..d
        };
        assert_eq!(TrainConfig::parse_str(&c.render()).unwrap(), c);
    }
}
