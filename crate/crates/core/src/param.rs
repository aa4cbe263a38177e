//! Named trainable parameters and the momentum SGD update.

use std::collections::HashMap;

use rand::Rng;

use crate::error::CheckpointError;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub momentum: Tensor<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        let momentum = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
            momentum,
        }
    }
}

/// How convolution weights are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightInit {
    /// `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`.
    #[default]
    Glorot,
    /// `U(-a, a)`, `a = sqrt(6 / fan_in)`.
    He,
}

impl WeightInit {
    pub fn name(self) -> &'static str {
        match self {
            WeightInit::Glorot => "glorot",
            WeightInit::He => "he",
        }
    }
}

/// Ordered collection of uniquely named parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
    weight_init: WeightInit,
}

/// Tape handles for every parameter of a store, valid for one forward pass.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles supplied by the caller, one per parameter in registration order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl std::ops::Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            weight_init: WeightInit::Glorot,
        }
    }

    /// Scheme used by later [`ParamStore::add_weight`] calls.
    pub fn set_weight_init(&mut self, init: WeightInit) {
        self.weight_init = init;
    }

    pub fn weight_init(&self) -> WeightInit {
        self.weight_init
    }

    /// Weight drawn with the store's current [`WeightInit`].
    pub fn add_weight<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        match self.weight_init {
            WeightInit::Glorot => self.add_glorot(name, shape, fan_in, fan_out, rng),
            WeightInit::He => self.add_he(name, shape, fan_in, rng),
        }
    }

    /// Registers a parameter. Panics on a duplicate name, which would be a
    /// network construction bug.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Parameter::new(name, value));
        ParamId(id)
    }

    /// Glorot-uniform weight: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    pub fn add_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.add(name, Tensor::uniform(shape, -a, a, rng))
    }

    /// He uniform: variance `2 / fan_in`, which keeps activation scale
    /// through ReLU layers.
    pub fn add_he<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let a = (6.0 / fan_in.max(1) as f64).sqrt();
        self.add(name, Tensor::uniform(shape, -a, a, rng))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.iter_mut()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Copies of every parameter value in registration order.
    pub fn values(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    /// Records every parameter value as a gradient-requiring leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.leaf(p.value.clone(), true))
                .collect(),
        }
    }

    /// Same as [`ParamStore::bind`] but without gradient tracking.
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.constant(p.value.clone()))
                .collect(),
        }
    }

    /// Adds the gradients of a backward pass into each `Parameter::grad`.
    pub fn accumulate(&mut self, bound: &Bound, grads: &mut Gradients<T>) {
        for (p, &v) in self.params.iter_mut().zip(&bound.vars) {
            if let Some(g) = grads.take(v) {
                p.grad.add_assign(&g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    momentum: p.momentum.cast(),
                })
                .collect(),
            index: self.index.clone(),
            weight_init: self.weight_init,
        }
    }

    /// Overwrites values (and momentum buffers, when present) from named
    /// entries. Every parameter must be present and no foreign name may appear.
    pub fn load_entries(&mut self, entries: &[(String, Tensor<T>)]) -> Result<(), CheckpointError> {
        let mut seen = vec![false; self.params.len()];
        for (name, value) in entries {
            let (base, is_momentum) = match name.strip_suffix(MOMENTUM_SUFFIX) {
                Some(base) if self.index.contains_key(base) => (base, true),
                _ => (name.as_str(), false),
            };
            let Some(&idx) = self.index.get(base) else {
                return Err(CheckpointError::Unexpected(name.clone()));
            };
            let p = &mut self.params[idx];
            if p.value.shape() != value.shape() {
                return Err(CheckpointError::Shape {
                    name: name.clone(),
                    expected: p.value.shape().to_vec(),
                    found: value.shape().to_vec(),
                });
            }
            if is_momentum {
                p.momentum = value.clone();
            } else {
                p.value = value.clone();
                seen[idx] = true;
            }
        }
        if let Some(idx) = seen.iter().position(|s| !s) {
            return Err(CheckpointError::Missing(self.params[idx].name.clone()));
        }
        Ok(())
    }

    /// Values followed by momentum buffers, in registration order.
    pub fn entries(&self) -> Vec<(String, &Tensor<T>)> {
        let values = self.params.iter().map(|p| (p.name.clone(), &p.value));
        let moms = self
            .params
            .iter()
            .map(|p| (format!("{}{MOMENTUM_SUFFIX}", p.name), &p.momentum));
        values.chain(moms).collect()
    }
}

pub const MOMENTUM_SUFFIX: &str = ".m";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// Scales every gradient so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
pub fn clip_grad_norm<T: Real>(params: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let norm = params
        .iter()
        .flat_map(|p| p.grad.data())
        .map(|&g| g.to_f64() * g.to_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = T::from_f64(max_norm / norm);
        for p in params.iter_mut() {
            p.grad.scale_in_place(k);
        }
    }
    norm
}

/// One momentum SGD step with L2 weight decay, then zeroes the gradients:
/// `buf = momentum * buf + (grad + wd * value)`, `value -= lr * buf`.
pub fn sgd_step<T: Real>(params: &mut ParamStore<T>, cfg: SgdConfig) {
    let lr = T::from_f64(cfg.lr);
    let mu = T::from_f64(cfg.momentum);
    let wd = T::from_f64(cfg.weight_decay);
    for p in params.iter_mut() {
        let Parameter {
            value,
            grad,
            momentum,
            ..
        } = p;
        for ((v, g), m) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data_mut())
            .zip(momentum.data_mut())
        {
            *m = mu * *m + (*g + wd * *v);
            *v = *v - lr * *m;
            *g = T::zero();
        }
    }
}
