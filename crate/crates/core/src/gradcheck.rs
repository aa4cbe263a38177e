//! Central finite-difference verification of reverse-mode gradients.
//!
//! The perturbation for coordinate `x_i` is `h = 1e-5 * max(1, |x_i|)` and the
//! error metric is `|a - n| / max(1e-8, |a| + |n|)`.
//!
//! A coordinate whose perturbation moves any ReLU input across zero is
//! skipped: the central difference there straddles a kink and measures
//! neither one-sided derivative.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;

/// Scalar function of several tensors, expressed on a tape.
pub trait TapeFn: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, Error> {}

impl<F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, Error>> TapeFn for F {}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coordinate {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub pass: bool,
    pub checked: usize,
    /// Coordinates skipped because the perturbation crossed a ReLU kink.
    pub skipped: usize,
    pub worst: Option<Coordinate>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct GradChecker {
    pub tol: f64,
    /// Check at most this many coordinates per input, chosen at random.
    pub max_coords: Option<usize>,
    pub seed: u64,
    pub fault: Option<OpKind>,
}

impl GradChecker {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            max_coords: None,
            seed: 0,
            fault: None,
        }
    }

    pub fn sampled(mut self, max_coords: usize, seed: u64) -> Self {
        self.max_coords = Some(max_coords);
        self.seed = seed;
        self
    }

    pub fn with_fault(mut self, kind: OpKind) -> Self {
        self.fault = Some(kind);
        self
    }

    pub fn check(&self, f: impl TapeFn, inputs: &[Tensor<f64>]) -> Result<GradCheckReport, Error> {
        let mut tape = Tape::new();
        if let Some(kind) = self.fault {
            tape.corrupt_backward(kind);
        }
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let root = f(&mut tape, &vars)?;
        let base_pattern = tape.relu_pattern();
        let mut grads = tape.backward(root)?;
        let analytic: Vec<Tensor<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();

        let eval = |xs: &[Tensor<f64>]| -> Result<(f64, bool), Error> {
            let mut tape = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
            let root = f(&mut tape, &vars)?;
            Ok((tape.value(root).data()[0], tape.relu_pattern() == base_pattern))
        };

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut report = GradCheckReport {
            max_rel_err: 0.0,
            pass: true,
            checked: 0,
            skipped: 0,
            worst: None,
            failure: None,
        };
        let mut work = inputs.to_vec();
        for (input, t) in inputs.iter().enumerate() {
            let n = t.numel();
            let coords: Vec<usize> = match self.max_coords {
                Some(k) if k < n => {
                    let mut c = sample(&mut rng, n, k).into_vec();
                    c.sort_unstable();
                    c
                }
                _ => (0..n).collect(),
            };
            for index in coords {
                let x0 = t.data()[index];
                let h = 1e-5 * x0.abs().max(1.0);
                work[input].data_mut()[index] = x0 + h;
                let (fp, same_p) = eval(&work)?;
                work[input].data_mut()[index] = x0 - h;
                let (fm, same_m) = eval(&work)?;
                work[input].data_mut()[index] = x0;
                if !(same_p && same_m) {
                    report.skipped += 1;
                    continue;
                }

                let a = analytic[input].data()[index];
                let num = (fp - fm) / (2.0 * h);
                let coord = Coordinate {
                    input,
                    index,
                    analytic: a,
                    numeric: num,
                };
                report.checked += 1;
                if !(a.is_finite() && num.is_finite()) {
                    report.pass = false;
                    report.max_rel_err = f64::INFINITY;
                    report.worst = Some(coord);
                    report.failure = Some(format!(
                        "non-finite gradient at input {input}, index {index} (analytic {a}, numeric {num})"
                    ));
                    return Ok(report);
                }
                let rel = (a - num).abs() / (a.abs() + num.abs()).max(1e-8);
                if rel > report.max_rel_err || report.worst.is_none() {
                    report.max_rel_err = report.max_rel_err.max(rel);
                    report.worst = Some(coord);
                }
            }
        }
        report.pass = report.max_rel_err <= self.tol;
        if !report.pass {
            if let Some(w) = report.worst {
                report.failure = Some(format!(
                    "relative error {:.3e} at input {}, index {} (analytic {:.6e}, numeric {:.6e})",
                    report.max_rel_err, w.input, w.index, w.analytic, w.numeric
                ));
            }
        }
        Ok(report)
    }
}

/// Checks every coordinate of a single input.
pub fn grad_check(
    f: impl Fn(&mut Tape<f64>, Var) -> Result<Var, Error>,
    x: &Tensor<f64>,
    tol: f64,
) -> Result<GradCheckReport, Error> {
    GradChecker::new(tol).check(|tape: &mut Tape<f64>, v: &[Var]| f(tape, v[0]), std::slice::from_ref(x))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_sum_is_exact() {
        let x = Tensor::from_f64_slice(&[3], &[0.3, -2.0, 5.5]).unwrap();
        let r = grad_check(|t, v| Ok(t.sum(v)), &x, 1e-10).unwrap();
        assert!(r.pass);
        assert!(r.max_rel_err < 1e-10, "{}", r.max_rel_err);
        assert_eq!(r.checked, 3);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Tensor::from_f64_slice(&[2], &[0.3, -0.7]).unwrap();
        let f = |t: &mut Tape<f64>, v: Var| {
            let s = t.sigmoid(v);
            Ok(t.sum(s))
        };
        let ok = GradChecker::new(1e-6)
            .check(|t: &mut Tape<f64>, v: &[Var]| f(t, v[0]), std::slice::from_ref(&x))
            .unwrap();
        assert!(ok.pass);
        let bad = GradChecker::new(1e-6)
            .with_fault(OpKind::Sigmoid)
            .check(|t: &mut Tape<f64>, v: &[Var]| f(t, v[0]), std::slice::from_ref(&x))
            .unwrap();
        assert!(!bad.pass);
        assert!(bad.failure.is_some());
    }

    #[test]
    fn non_finite_values_fail_with_location() {
        let x = Tensor::from_f64_slice(&[2], &[1.0, f64::INFINITY]).unwrap();
        let r = grad_check(|t, v| Ok(t.sum(v)), &x, 1e-4).unwrap();
        assert!(!r.pass);
        assert_eq!(r.worst.unwrap().index, 0);
        assert!(r.failure.unwrap().contains("non-finite"));
    }

    #[test]
    fn kink_crossings_are_skipped() {
        let x = Tensor::from_f64_slice(&[3], &[0.0, 0.5, -0.5]).unwrap();
        let r = grad_check(
            |t, v| {
                let y = t.relu(v);
                Ok(t.sum(y))
            },
            &x,
            1e-8,
        )
        .unwrap();
        assert!(r.pass);
        assert_eq!((r.checked, r.skipped), (2, 1));
    }
}
