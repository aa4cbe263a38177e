use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::blocks::{DecoderBlock, Upsampler};
use super::encoder::{check_divisible, Encoder};
use super::fusion::{FeatureFusion, FeaturePyramid};
use super::layers::Conv;
use crate::error::{Error, TensorError};
use crate::param::{Bound, ParamStore, WeightInit};
use crate::tape::{Tape, Var};
use crate::tensor::{Real, Tensor};

/// Stride of the finest pyramid level; the output head upsamples by this.
pub const STEM_STRIDE: usize = 4;

/// Architecture description. The four boolean switches are the ablation axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkSpec {
    pub in_channels: usize,
    pub base_channels: usize,
    pub se_reduction: usize,
    pub enable_rcb: bool,
    pub enable_ff: bool,
    pub enable_se: bool,
    pub enable_duc: bool,
    pub head_factor: usize,
    /// Scheme for convolution weights; dense layers are always Glorot.
    pub weight_init: WeightInit,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self::fednet(16)
    }
}

impl NetworkSpec {
    /// All components enabled.
    pub fn fednet(base_channels: usize) -> Self {
        Self {
            in_channels: 3,
            base_channels,
            se_reduction: 16,
            enable_rcb: true,
            enable_ff: true,
            enable_se: true,
            enable_duc: true,
            head_factor: STEM_STRIDE,
            weight_init: WeightInit::Glorot,
        }
    }

    /// The plain encoder-decoder with direct skip additions.
    pub fn baseline(&self) -> Self {
        Self {
            enable_rcb: false,
            enable_ff: false,
            enable_se: false,
            enable_duc: false,
            ..*self
        }
    }

    pub fn with_se_reduction(self, se_reduction: usize) -> Self {
        Self { se_reduction, ..self }
    }

    pub fn channels_per_level(&self) -> [usize; 4] {
        let c = self.base_channels;
        [c, 2 * c, 4 * c, 8 * c]
    }

    pub fn head_channels(&self) -> usize {
        (self.base_channels / 2).max(1)
    }

    pub fn uses_se(&self) -> bool {
        self.enable_ff && self.enable_se
    }

    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.in_channels == 0 {
            return bad("in_channels must be positive".into());
        }
        if self.base_channels < 2 {
            return bad(format!(
                "base_channels must be at least 2 (decoder blocks need 4 channels), got {}",
                self.base_channels
            ));
        }
        if self.head_factor != STEM_STRIDE {
            return bad(format!(
                "head_factor must equal the stem stride {STEM_STRIDE}, got {}",
                self.head_factor
            ));
        }
        if self.uses_se() {
            if self.se_reduction == 0 {
                return bad("se_reduction must be positive".into());
            }
            for c in self.channels_per_level() {
                if c % self.se_reduction != 0 || c < self.se_reduction {
                    return bad(format!(
                        "se_reduction {} does not divide level channel count {c}",
                        self.se_reduction
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Encoder-decoder segmentation network. With every switch off this is the
/// baseline U-Net-style model.
#[derive(Debug, Clone)]
pub struct FedNet {
    pub spec: NetworkSpec,
    pub encoder: Encoder,
    pub fusion: Option<FeatureFusion>,
    pub up4: Upsampler,
    /// 1x1 channel-matching convolutions applied to skips `H_3`, `H_2`, `H_1`.
    pub skips: [Conv; 3],
    pub dec3: DecoderBlock,
    pub dec2: DecoderBlock,
    pub head_up: Upsampler,
    pub head_out: Conv,
}

impl FedNet {
    pub fn new<T: Real, R: Rng + ?Sized>(
        spec: NetworkSpec,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self, Error> {
        spec.validate()?;
        store.set_weight_init(spec.weight_init);
        let ch = spec.channels_per_level();
        let encoder = Encoder::new(store, spec.in_channels, &ch, spec.enable_rcb, rng);
        let fusion = if spec.enable_ff {
            let r = spec.enable_se.then_some(spec.se_reduction);
            Some(FeatureFusion::new(store, "ff", &ch, r, rng)?)
        } else {
            None
        };
        let up4 = Upsampler::new(store, "dec.stage4", ch[3], ch[2], 2, spec.enable_duc, rng);
        let skips = [
            Conv::pointwise(store, "dec.skip3", ch[2], ch[2], rng),
            Conv::pointwise(store, "dec.skip2", ch[1], ch[1], rng),
            Conv::pointwise(store, "dec.skip1", ch[0], ch[0], rng),
        ];
        let dec3 = DecoderBlock::new(store, "dec.block3", ch[2], ch[1], rng)?;
        let dec2 = DecoderBlock::new(store, "dec.block2", ch[1], ch[0], rng)?;
        let head_c = spec.head_channels();
        let head_up = Upsampler::new(store, "head", ch[0], head_c, spec.head_factor, spec.enable_duc, rng);
        let head_out = Conv::pointwise(store, "head.out", head_c, 1, rng);
        Ok(Self {
            spec,
            encoder,
            fusion,
            up4,
            skips,
            dec3,
            dec2,
            head_up,
            head_out,
        })
    }

    /// Builds the network and a freshly initialised parameter store.
    pub fn init<T: Real>(spec: NetworkSpec, seed: u64) -> Result<(Self, ParamStore<T>), Error> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = Self::new(spec, &mut store, &mut rng)?;
        Ok((net, store))
    }

    pub fn encode<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<FeaturePyramid, TensorError> {
        let shape = tape.value(x).shape();
        if shape.len() == 4 && shape[1] != self.spec.in_channels {
            return Err(TensorError::ShapeMismatch {
                op: "fednet",
                axis: "input channels",
                expected: self.spec.in_channels,
                found: shape[1],
            });
        }
        self.encoder.forward(tape, p, x)
    }

    /// Pre-sigmoid output `[n, 1, h, w]`.
    pub fn forward_logits<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, TensorError> {
        check_divisible("fednet", tape.value(x).shape())?;
        let pyramid = self.encode(tape, p, x)?;
        let skips = match &self.fusion {
            Some(ff) => ff.forward(tape, p, &pyramid)?.fused,
            None => pyramid.levels,
        };

        let u = self.up4.forward(tape, p, skips[3])?;
        let s = self.skips[0].forward(tape, p, skips[2])?;
        let a = tape.add(u, s)?;
        let a = tape.relu(a);

        let u = self.dec3.forward(tape, p, a)?;
        let s = self.skips[1].forward(tape, p, skips[1])?;
        let b = tape.add(u, s)?;
        let b = tape.relu(b);

        let u = self.dec2.forward(tape, p, b)?;
        let s = self.skips[2].forward(tape, p, skips[0])?;
        let c = tape.add(u, s)?;
        let c = tape.relu(c);

        let h = self.head_up.forward(tape, p, c)?;
        let h = tape.relu(h);
        self.head_out.forward(tape, p, h)
    }

    /// Per-pixel probabilities `[n, 1, h, w]`, strictly inside (0, 1).
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, TensorError> {
        let logits = self.forward_logits(tape, p, x)?;
        Ok(tape.sigmoid(logits))
    }

    /// Inference without gradient tracking.
    pub fn predict<T: Real>(&self, store: &ParamStore<T>, x: Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let mut tape = Tape::new();
        let p = store.bind_frozen(&mut tape);
        let xv = tape.constant(x);
        let y = self.forward(&mut tape, &p, xv)?;
        Ok(tape.value(y).clone())
    }
}

/// Forward pass of the baseline model: identical to [`FedNet::forward`] with
/// RCB, fusion and DUC switched off.
pub fn baseline_forward<T: Real>(
    net: &FedNet,
    tape: &mut Tape<T>,
    p: &Bound,
    x: Var,
) -> Result<Var, Error> {
    let s = net.spec;
    if s.enable_rcb || s.enable_ff || s.enable_duc {
        return Err(Error::Spec(
            "baseline_forward needs a network built from NetworkSpec::baseline".into(),
        ));
    }
    Ok(net.forward(tape, p, x)?)
}
