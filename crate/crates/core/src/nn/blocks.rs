//! Building blocks of the segmentation networks.

use rand::Rng;

use super::layers::{Conv, ConvTranspose, Dense};
use crate::error::TensorError;
use crate::param::{Bound, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Real;

/// Squeeze-and-excitation channel gate:
/// `x * sigmoid(fc2(relu(fc1(avg_pool(x)))))` with `fc1: C -> C/r`, `fc2: C/r -> C`.
#[derive(Debug, Clone)]
pub struct SeBlock {
    pub fc1: Dense,
    pub fc2: Dense,
    pub channels: usize,
}

impl SeBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        if reduction == 0 || !channels.is_multiple_of(reduction) || channels < reduction {
            return Err(TensorError::Indivisible {
                op: "se_block",
                axis: "channel",
                extent: channels,
                divisor: reduction,
            });
        }
        let hidden = channels / reduction;
        Ok(Self {
            fc1: Dense::new(store, &format!("{name}.fc1"), channels, hidden, rng),
            fc2: Dense::new(store, &format!("{name}.fc2"), hidden, channels, rng),
            channels,
        })
    }

    /// Per-channel gates in (0, 1), shape `[n, c]`.
    pub fn gates<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, TensorError> {
        let squeezed = tape.global_avg_pool(x)?;
        let h = self.fc1.forward(tape, p, squeezed)?;
        let h = tape.relu(h);
        let g = self.fc2.forward(tape, p, h)?;
        Ok(tape.sigmoid(g))
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, TensorError> {
        let g = self.gates(tape, p, x)?;
        tape.channel_scale(x, g)
    }
}

/// Residual convolution block without normalization:
/// `relu(x + conv2(relu(conv1(x))))`, both convolutions 3x3 and channel-preserving.
#[derive(Debug, Clone)]
pub struct Rcb {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl Rcb {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            conv1: Conv::same3(store, &format!("{name}.conv1"), channels, channels, rng),
            conv2: Conv::same3(store, &format!("{name}.conv2"), channels, channels, rng),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, TensorError> {
        let h = self.conv1.forward(tape, p, x)?;
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, p, h)?;
        let s = tape.add(x, h)?;
        Ok(tape.relu(s))
    }
}

/// Dense upsampling convolution: a 3x3 convolution to `c_out * r^2` channels
/// followed by pixel shuffling by `r`.
#[derive(Debug, Clone)]
pub struct Duc {
    pub conv: Conv,
    pub factor: usize,
}

impl Duc {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        c_out: usize,
        factor: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            conv: Conv::same3(store, &format!("{name}.conv"), cin, c_out * factor * factor, rng),
            factor,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, TensorError> {
        let h = self.conv.forward(tape, p, x)?;
        tape.pixel_shuffle(h, self.factor)
    }
}

/// Resolution-raising stage: DUC, or nearest upsampling + 3x3 convolution
/// when DUC is ablated.
#[derive(Debug, Clone)]
pub enum Upsampler {
    Duc(Duc),
    NearestConv { conv: Conv, factor: usize },
}

impl Upsampler {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        c_out: usize,
        factor: usize,
        use_duc: bool,
        rng: &mut R,
    ) -> Self {
        if use_duc {
            Upsampler::Duc(Duc::new(store, &format!("{name}.duc"), cin, c_out, factor, rng))
        } else {
            Upsampler::NearestConv {
                conv: Conv::same3(store, &format!("{name}.up.conv"), cin, c_out, rng),
                factor,
            }
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, TensorError> {
        match self {
            Upsampler::Duc(d) => d.forward(tape, p, x),
            Upsampler::NearestConv { conv, factor } => {
                let u = tape.upsample_nearest(x, *factor)?;
                conv.forward(tape, p, u)
            }
        }
    }
}

/// Decoder block: 1x1 reduce to `C/4`, ReLU, 2x2 stride-2 transposed
/// convolution, ReLU, 1x1 restore to `c_out`. Doubles the spatial extent.
#[derive(Debug, Clone)]
pub struct DecoderBlock {
    pub reduce: Conv,
    pub up: ConvTranspose,
    pub restore: Conv,
}

impl DecoderBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        c_out: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        if cin < 4 {
            return Err(TensorError::InvalidArgument {
                op: "decoder_block",
                msg: format!("needs at least 4 input channels, got {cin}"),
            });
        }
        let mid = cin / 4;
        Ok(Self {
            reduce: Conv::pointwise(store, &format!("{name}.reduce"), cin, mid, rng),
            up: ConvTranspose::new(store, &format!("{name}.up"), mid, mid, 2, 2, 0, rng),
            restore: Conv::pointwise(store, &format!("{name}.restore"), mid, c_out, rng),
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, TensorError> {
        let h = self.reduce.forward(tape, p, x)?;
        let h = tape.relu(h);
        let h = self.up.forward(tape, p, h)?;
        let h = tape.relu(h);
        self.restore.forward(tape, p, h)
    }
}
