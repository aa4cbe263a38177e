//! Composite segmentation loss: weighted binary cross-entropy plus the
//! negative log of the soft Jaccard index.
//!
//! ```text
//! L(y, p) = mean[(w1 - 1) y log p - w1 (1 - y) log(1 - p)]
//!           - w2 log((|y . p| + eps) / (|y| + |p| - |y . p| + eps))
//! ```

use crate::error::{MetricError, TensorError};
use crate::tape::{self, Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    omega1: f64,
    omega2: f64,
    epsilon: f64,
    clamp_delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            omega1: 0.5,
            omega2: 1.0,
            epsilon: 1e-15,
            clamp_delta: 1e-7,
        }
    }
}

impl LossWeights {
    pub fn new(omega1: f64, omega2: f64, epsilon: f64, clamp_delta: f64) -> Result<Self, MetricError> {
        let bad = |m: &str| Err(MetricError::InvalidWeights(m.to_string()));
        if !(omega1 > 0.0 && omega1 < 1.0) {
            return bad("omega1 must lie in (0, 1)");
        }
        if !(omega2 >= 0.0 && omega2.is_finite()) {
            return bad("omega2 must be non-negative");
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(clamp_delta > 0.0 && clamp_delta < 0.5) {
            return bad("clamp_delta must lie in (0, 0.5)");
        }
        Ok(Self {
            omega1,
            omega2,
            epsilon,
            clamp_delta,
        })
    }

    pub fn omega1(&self) -> f64 {
        self.omega1
    }

    pub fn omega2(&self) -> f64 {
        self.omega2
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn clamp_delta(&self) -> f64 {
        self.clamp_delta
    }
}

/// How the Jaccard term is reduced over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JaccardMode {
    /// One index per slice; the negative logs are averaged.
    #[default]
    PerSlice,
    /// One index over every pixel of the batch.
    Pooled,
}

/// Ground truth in {0, 1} and a prediction in [0, 1] of the same shape.
#[derive(Debug, Clone, Copy)]
pub struct SegmentationPair<'a, T> {
    y: &'a Tensor<T>,
    y_hat: &'a Tensor<T>,
}

impl<'a, T: Real> SegmentationPair<'a, T> {
    pub fn new(y: &'a Tensor<T>, y_hat: &'a Tensor<T>) -> Result<Self, MetricError> {
        if y.shape() != y_hat.shape() {
            return Err(MetricError::InvalidPair(format!(
                "shapes differ: {:?} vs {:?}",
                y.shape(),
                y_hat.shape()
            )));
        }
        if let Some(v) = y.data().iter().find(|&&v| v != T::zero() && v != T::one()) {
            return Err(MetricError::InvalidPair(format!("ground truth value {v} is not binary")));
        }
        if let Some(v) = y_hat
            .data()
            .iter()
            .find(|&&v| !(v >= T::zero() && v <= T::one()))
        {
            return Err(MetricError::InvalidPair(format!("prediction {v} outside [0, 1]")));
        }
        Ok(Self { y, y_hat })
    }

    pub fn y(&self) -> &Tensor<T> {
        self.y
    }

    pub fn y_hat(&self) -> &Tensor<T> {
        self.y_hat
    }
}

pub fn weighted_bce<T: Real>(pair: &SegmentationPair<'_, T>, w: &LossWeights) -> T {
    tape::weighted_bce_value(
        pair.y_hat.data(),
        pair.y.data(),
        T::from_f64(w.omega1),
        T::from_f64(w.clamp_delta),
    )
}

/// `(sum(y p) + eps) / (sum(y) + sum(p) - sum(y p) + eps)` over all elements.
pub fn soft_jaccard<T: Real>(pair: &SegmentationPair<'_, T>, epsilon: f64) -> T {
    let e = T::from_f64(epsilon);
    let (inter, union) = tape::jaccard_sums(pair.y_hat.data(), pair.y.data());
    (inter + e) / (union + e)
}

/// The full loss for one slice (all elements pooled).
pub fn combined_loss<T: Real>(pair: &SegmentationPair<'_, T>, w: &LossWeights) -> T {
    weighted_bce(pair, w) - T::from_f64(w.omega2) * soft_jaccard(pair, w.epsilon).ln()
}

/// Differentiable loss on a batch `[n, ...]`: BCE averaged over all pixels,
/// Jaccard reduced according to `mode`.
pub fn combined_loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    pred: Var,
    target: Var,
    w: &LossWeights,
    mode: JaccardMode,
) -> Result<Var, TensorError> {
    let bce = tape.weighted_bce(pred, target, w.omega1, w.clamp_delta)?;
    if w.omega2 == 0.0 {
        return Ok(bce);
    }
    let jac = tape.neg_log_jaccard(pred, target, w.epsilon, mode == JaccardMode::PerSlice)?;
    let jac = tape.scale(jac, w.omega2);
    tape.add(bce, jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64_slice(&[v.len()], v).unwrap()
    }

    #[test]
    fn weights_are_validated() {
        assert!(LossWeights::new(0.0, 1.0, 1e-15, 1e-7).is_err());
        assert!(LossWeights::new(1.0, 1.0, 1e-15, 1e-7).is_err());
        assert!(LossWeights::new(0.5, -1.0, 1e-15, 1e-7).is_err());
        assert!(LossWeights::new(0.5, 1.0, 0.0, 1e-7).is_err());
        assert!(LossWeights::new(0.5, 1.0, 1e-15, 0.5).is_err());
        assert!(LossWeights::new(0.3, 0.0, 1e-15, 1e-7).is_ok());
    }

    #[test]
    fn pair_is_validated() {
        let y = t(&[0.0, 1.0]);
        assert!(SegmentationPair::new(&y, &t(&[0.5])).is_err());
        assert!(SegmentationPair::new(&t(&[0.5, 1.0]), &y).is_err());
        assert!(SegmentationPair::new(&y, &t(&[0.5, 1.5])).is_err());
        assert!(SegmentationPair::new(&y, &t(&[0.5, 1.0])).is_ok());
    }

    #[test]
    fn bce_anchors() {
        let w = LossWeights::default();
        let ones = t(&[1.0, 1.0, 1.0]);
        let v = weighted_bce(&SegmentationPair::new(&ones, &ones).unwrap(), &w);
        assert!(v >= 0.0 && v <= 0.5 * (1.0f64 - 1e-7).ln().abs() * 1.000001);

        let half = t(&[0.5]);
        let one = t(&[1.0]);
        let v = weighted_bce(&SegmentationPair::new(&one, &half).unwrap(), &w);
        assert!((v - 0.5 * 2f64.ln()).abs() < 1e-15);

        let zero = t(&[0.0]);
        let v = weighted_bce(&SegmentationPair::new(&zero, &zero).unwrap(), &w);
        assert!((0.0..1e-7).contains(&v));
    }

    #[test]
    fn jaccard_anchors() {
        let y = t(&[1.0, 0.0, 1.0]);
        assert_eq!(soft_jaccard(&SegmentationPair::new(&y, &y).unwrap(), 1e-15), 1.0);
        let z = t(&[0.0, 0.0]);
        assert_eq!(soft_jaccard(&SegmentationPair::new(&z, &z).unwrap(), 1e-15), 1.0);
        let y = t(&[1.0, 0.0]);
        let p = t(&[0.5, 0.5]);
        let j = soft_jaccard(&SegmentationPair::new(&y, &p).unwrap(), 1e-15);
        assert!((j - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn tape_loss_matches_value_for_one_slice() {
        let y = Tensor::from_f64_slice(&[1, 4], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        let p = Tensor::from_f64_slice(&[1, 4], &[0.7, 0.2, 0.4, 0.9]).unwrap();
        let w = LossWeights::default();
        let want = combined_loss(&SegmentationPair::new(&y, &p).unwrap(), &w);
        let mut tape = Tape::<f64>::new();
        let pv = tape.leaf(p, true);
        let yv = tape.constant(y);
        let l = combined_loss_on_tape(&mut tape, pv, yv, &w, JaccardMode::PerSlice).unwrap();
        assert!((tape.value(l).data()[0] - want).abs() < 1e-15);
    }
}
