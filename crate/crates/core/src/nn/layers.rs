use rand::Rng;

use crate::error::TensorError;
use crate::param::{Bound, ParamId, ParamStore, WeightInit};
use crate::tape::{Tape, Var};
use crate::tensor::Real;

/// 2-D convolution with a learned bias. Parameters `{name}.w` `[cout, cin, k, k]`
/// and `{name}.b` `[cout]`.
#[derive(Debug, Clone)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let area = kernel * kernel;
        let w = store.add_weight(format!("{name}.w"), &[cout, cin, kernel, kernel], cin * area, cout * area, rng);
        let b = store.add_zeros(format!("{name}.b"), &[cout]);
        Self { w, b, stride, pad }
    }

    /// 3x3, stride 1, "same" padding.
    pub fn same3<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Self {
        Self::new(store, name, cin, cout, 3, 1, 1, rng)
    }

    pub fn pointwise<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Self {
        Self::new(store, name, cin, cout, 1, 1, 0, rng)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, TensorError> {
        tape.conv2d(x, p[self.w], p[self.b], self.stride, self.pad)
    }
}

/// Transposed convolution; weight `{name}.w` is `[cin, cout, k, k]`.
#[derive(Debug, Clone)]
pub struct ConvTranspose {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let area = kernel * kernel;
        let shape = [cin, cout, kernel, kernel];
        let w = match store.weight_init() {
            WeightInit::Glorot => store.add_glorot(format!("{name}.w"), &shape, cin * area, cout * area, rng),
            // Each output pixel sees `cin * (k / stride)^2` inputs.
            WeightInit::He => {
                let fan_in = cin * area / (stride * stride).clamp(1, area);
                store.add_he(format!("{name}.w"), &shape, fan_in, rng)
            }
        };
        let b = store.add_zeros(format!("{name}.b"), &[cout]);
        Self { w, b, stride, pad }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, TensorError> {
        tape.conv_transpose2d(x, p[self.w], p[self.b], self.stride, self.pad)
    }
}

/// Fully connected layer, weight `[cout, cin]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add_glorot(format!("{name}.w"), &[cout, cin], cin, cout, rng);
        let b = store.add_zeros(format!("{name}.b"), &[cout]);
        Self { w, b }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var, TensorError> {
        tape.dense(x, p[self.w], p[self.b])
    }
}
