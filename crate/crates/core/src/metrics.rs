//! Dice overlap on binary masks. A voxel is foreground when it is non-zero.

use crate::error::MetricError;

/// Voxel counts needed for Dice: `(|a ∩ b|, |a|, |b|)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OverlapCounts {
    pub intersection: u64,
    pub a: u64,
    pub b: u64,
}

impl OverlapCounts {
    pub fn of(a: &[u8], b: &[u8]) -> Result<Self, MetricError> {
        if a.len() != b.len() {
            return Err(MetricError::ShapeMismatch {
                a: a.len(),
                b: b.len(),
            });
        }
        let mut c = Self::default();
        for (&x, &y) in a.iter().zip(b) {
            let (x, y) = (x != 0, y != 0);
            c.a += x as u64;
            c.b += y as u64;
            c.intersection += (x && y) as u64;
        }
        Ok(c)
    }

    /// `2|a ∩ b| / (|a| + |b|)`, or 1 when both masks are empty.
    pub fn dice(&self) -> f64 {
        let denom = self.a + self.b;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.intersection as f64 / denom as f64
        }
    }

    fn merge(self, o: Self) -> Self {
        Self {
            intersection: self.intersection + o.intersection,
            a: self.a + o.a,
            b: self.b + o.b,
        }
    }
}

pub fn dice(a: &[u8], b: &[u8]) -> Result<f64, MetricError> {
    Ok(OverlapCounts::of(a, b)?.dice())
}

/// Unweighted mean of per-case Dice.
pub fn dice_per_case<A: AsRef<[u8]>, B: AsRef<[u8]>>(cases: &[(A, B)]) -> Result<f64, MetricError> {
    if cases.is_empty() {
        return Err(MetricError::NoCases);
    }
    let mut total = 0.0;
    for (a, b) in cases {
        total += dice(a.as_ref(), b.as_ref())?;
    }
    Ok(total / cases.len() as f64)
}

/// Dice over voxel counts pooled across every case.
pub fn dice_global<A: AsRef<[u8]>, B: AsRef<[u8]>>(cases: &[(A, B)]) -> Result<f64, MetricError> {
    if cases.is_empty() {
        return Err(MetricError::NoCases);
    }
    let mut pooled = OverlapCounts::default();
    for (a, b) in cases {
        pooled = pooled.merge(OverlapCounts::of(a.as_ref(), b.as_ref())?);
    }
    Ok(pooled.dice())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert_eq!(dice(&[1, 1, 0], &[1, 1, 0]).unwrap(), 1.0);
        assert_eq!(dice(&[1, 0, 0], &[0, 1, 1]).unwrap(), 0.0);
        assert_eq!(dice(&[1, 1, 0], &[0, 1, 1]).unwrap(), 0.5);
        assert_eq!(dice(&[0, 0], &[0, 0]).unwrap(), 1.0);
        assert!(dice(&[0, 0], &[0]).is_err());
    }

    #[test]
    fn per_case_and_global() {
        let cases = vec![(vec![1u8, 1], vec![1u8, 1]), (vec![1, 0], vec![0, 1])];
        assert_eq!(dice_per_case(&cases).unwrap(), 0.5);
        assert_eq!(dice_global(&cases).unwrap(), 2.0 * 2.0 / 6.0);
        let empty: Vec<(Vec<u8>, Vec<u8>)> = vec![];
        assert_eq!(dice_per_case(&empty), Err(MetricError::NoCases));
        assert_eq!(dice_global(&empty), Err(MetricError::NoCases));
    }

    #[test]
    fn empty_case_does_not_change_global() {
        let a = (vec![1u8, 1, 0, 0], vec![1u8, 0, 1, 0]);
        let e = (vec![0u8; 3], vec![0u8; 3]);
        let g = dice_global(&[a.clone(), e]).unwrap();
        assert_eq!(g, dice(&a.0, &a.1).unwrap());
    }
}
