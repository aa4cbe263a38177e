//! Four-level residual encoder with strides 4, 8, 16 and 32.

use rand::Rng;

use super::blocks::Rcb;
use super::fusion::FeaturePyramid;
use super::layers::Conv;
use crate::error::TensorError;
use crate::param::{Bound, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Real;

/// Input extents must be multiples of this.
pub const ENCODER_STRIDE: usize = 32;

/// Stride-2 basic residual unit with a projection shortcut:
/// `relu(conv_b(relu(conv_a(x))) + shortcut(x))`.
#[derive(Debug, Clone)]
pub struct DownStage {
    pub conv_a: Conv,
    pub conv_b: Conv,
    pub shortcut: Conv,
}

impl DownStage {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            conv_a: Conv::new(store, &format!("{name}.conv_a"), cin, cout, 3, 2, 1, rng),
            conv_b: Conv::same3(store, &format!("{name}.conv_b"), cout, cout, rng),
            shortcut: Conv::new(store, &format!("{name}.shortcut"), cin, cout, 1, 2, 0, rng),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, TensorError> {
        let h = self.conv_a.forward(tape, p, x)?;
        let h = tape.relu(h);
        let h = self.conv_b.forward(tape, p, h)?;
        let s = self.shortcut.forward(tape, p, x)?;
        let y = tape.add(h, s)?;
        Ok(tape.relu(y))
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    /// Stride-2 convolution followed by a stride-2 "pooling" convolution.
    pub stem: [Conv; 2],
    pub stages: Vec<DownStage>,
    /// One residual convolution block per level, when enabled.
    pub rcbs: Option<Vec<Rcb>>,
}

impl Encoder {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        in_channels: usize,
        channels: &[usize; 4],
        with_rcb: bool,
        rng: &mut R,
    ) -> Self {
        let c1 = channels[0];
        let stem = [
            Conv::new(store, "enc.stem1", in_channels, c1, 3, 2, 1, rng),
            Conv::new(store, "enc.stem2", c1, c1, 3, 2, 1, rng),
        ];
        let stages = (1..4)
            .map(|l| {
                DownStage::new(store, &format!("enc.stage{}", l + 1), channels[l - 1], channels[l], rng)
            })
            .collect();
        let rcbs = with_rcb.then(|| {
            channels
                .iter()
                .enumerate()
                .map(|(l, &c)| Rcb::new(store, &format!("rcb{}", l + 1), c, rng))
                .collect()
        });
        Self { stem, stages, rcbs }
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x: Var,
    ) -> Result<FeaturePyramid, TensorError> {
        check_divisible("encoder", tape.value(x).shape())?;
        let h = self.stem[0].forward(tape, p, x)?;
        let h = tape.relu(h);
        let h = self.stem[1].forward(tape, p, h)?;
        let mut level = tape.relu(h);
        let mut levels = vec![level];
        for stage in &self.stages {
            level = stage.forward(tape, p, level)?;
            levels.push(level);
        }
        if let Some(rcbs) = &self.rcbs {
            for (v, rcb) in levels.iter_mut().zip(rcbs) {
                *v = rcb.forward(tape, p, *v)?;
            }
        }
        Ok(FeaturePyramid { levels })
    }
}

pub(crate) fn check_divisible(op: &'static str, shape: &[usize]) -> Result<(), TensorError> {
    if shape.len() != 4 {
        return Err(TensorError::Rank {
            op,
            expected: 4,
            shape: shape.to_vec(),
        });
    }
    for (axis, extent) in [("height", shape[2]), ("width", shape[3])] {
        if extent == 0 || extent % ENCODER_STRIDE != 0 {
            return Err(TensorError::Indivisible {
                op,
                axis,
                extent,
                divisor: ENCODER_STRIDE,
            });
        }
    }
    Ok(())
}
