//! Attention-based multi-level feature fusion.
//!
//! For each level `l` of an `L`-level pyramid:
//!
//! ```text
//! H_l = SE(P_ll(x_l)) + sum_{i=l+1..L} SE(P_li(U_{2^(i-l)}(x_i)))
//! ```
//!
//! `P_li` is a learned 1x1 projection from level-`i` channels to level-`l`
//! channels and `U_f` is nearest-neighbour upsampling by `f`. Both the
//! projection and the SE gate commute with nearest upsampling, so each term is
//! evaluated at the source resolution and upsampled last.

use rand::Rng;

use super::blocks::SeBlock;
use super::layers::Conv;
use crate::error::TensorError;
use crate::param::{Bound, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Real;

/// Encoder outputs `x_1..x_L`, finest first.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub levels: Vec<Var>,
}

impl FeaturePyramid {
    /// Checks that each level halves the spatial extent of the previous one,
    /// doubles its channels and shares its batch size.
    pub fn validate<T: Real>(&self, tape: &Tape<T>) -> Result<(), TensorError> {
        const OP: &str = "feature_pyramid";
        if self.levels.is_empty() {
            return Err(TensorError::InvalidArgument {
                op: OP,
                msg: "pyramid has no levels".into(),
            });
        }
        for pair in self.levels.windows(2) {
            let (n0, c0, h0, w0) = tape.value(pair[0]).dims4(OP)?;
            let (n1, c1, h1, w1) = tape.value(pair[1]).dims4(OP)?;
            let checks = [
                ("batch", n0, n1),
                ("channel", 2 * c0, c1),
                ("height", h0, 2 * h1),
                ("width", w0, 2 * w1),
            ];
            for (axis, expected, found) in checks {
                if expected != found {
                    return Err(TensorError::ShapeMismatch {
                        op: OP,
                        axis,
                        expected,
                        found,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Fused maps `H_1..H_L`, each shaped like the matching pyramid level.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub fused: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct FusionTerm {
    pub source: usize,
    pub proj: Conv,
    pub se: Option<SeBlock>,
}

#[derive(Debug, Clone)]
pub struct FeatureFusion {
    /// `terms[l]` lists the contributions to `H_l`, own level first.
    pub terms: Vec<Vec<FusionTerm>>,
    pub channels: Vec<usize>,
}

impl FeatureFusion {
    /// `channels[l]` is the channel count of level `l`. With `se_reduction`
    /// set, every term is SE-gated; otherwise the gates are omitted.
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: &[usize],
        se_reduction: Option<usize>,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let mut terms = Vec::with_capacity(channels.len());
        for (l, &cl) in channels.iter().enumerate() {
            let mut level = Vec::new();
            for (i, &ci) in channels.iter().enumerate().skip(l) {
                let prefix = format!("{name}.l{}.from{}", l + 1, i + 1);
                let proj = Conv::pointwise(store, &format!("{prefix}.proj"), ci, cl, rng);
                let se = se_reduction
                    .map(|r| SeBlock::new(store, &format!("{prefix}.se"), cl, r, rng))
                    .transpose()?;
                level.push(FusionTerm { source: i, proj, se });
            }
            terms.push(level);
        }
        Ok(Self {
            terms,
            channels: channels.to_vec(),
        })
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        pyramid: &FeaturePyramid,
    ) -> Result<FusionOutput, TensorError> {
        pyramid.validate(tape)?;
        if pyramid.len() != self.channels.len() {
            return Err(TensorError::ShapeMismatch {
                op: "feature_fuse",
                axis: "levels",
                expected: self.channels.len(),
                found: pyramid.len(),
            });
        }
        for (&v, &c) in pyramid.levels.iter().zip(&self.channels) {
            let found = tape.value(v).shape()[1];
            if found != c {
                return Err(TensorError::ShapeMismatch {
                    op: "feature_fuse",
                    axis: "channel",
                    expected: c,
                    found,
                });
            }
        }
        let mut fused = Vec::with_capacity(self.terms.len());
        for (l, level) in self.terms.iter().enumerate() {
            let mut acc: Option<Var> = None;
            for term in level {
                let mut t = term.proj.forward(tape, p, pyramid.levels[term.source])?;
                if let Some(se) = &term.se {
                    t = se.forward(tape, p, t)?;
                }
                if term.source > l {
                    t = tape.upsample_nearest(t, 1 << (term.source - l))?;
                }
                acc = Some(match acc {
                    None => t,
                    Some(a) => tape.add(a, t)?,
                });
            }
            fused.push(acc.expect("every level has its own term"));
        }
        Ok(FusionOutput { fused })
    }

    /// Sets every projection to the rectangular identity (`w[j, k] = [j == k]`,
    /// zero bias).
    pub fn set_identity_projections<T: Real>(&self, store: &mut ParamStore<T>) {
        for term in self.terms.iter().flatten() {
            let w = &mut store.get_mut(term.proj.w).value;
            let (cout, cin) = (w.shape()[0], w.shape()[1]);
            let data = w.data_mut();
            for j in 0..cout {
                for k in 0..cin {
                    data[j * cin + k] = if j == k { T::one() } else { T::zero() };
                }
            }
            store.get_mut(term.proj.b).value.fill(T::zero());
        }
    }
}
