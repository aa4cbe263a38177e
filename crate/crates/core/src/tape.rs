//! Reverse-mode differentiation over a linear tape.
//!
//! Every op appends one node holding its output value and the handles of its
//! inputs. Nodes are only ever appended, so the tape is always in topological
//! order and [`Tape::backward`] is a single reverse sweep.

use crate::error::{GradError, TensorError};
use crate::kernels::{self, ConvGeom, ConvGrads};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv2d,
    ConvTranspose2d,
    Dense,
    Relu,
    Sigmoid,
    GlobalAvgPool,
    UpsampleNearest,
    PixelShuffle,
    PixelUnshuffle,
    Add,
    Mul,
    Scale,
    ChannelScale,
    Sum,
    Mean,
    WeightedBce,
    NegLogJaccard,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    ConvTranspose2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    Dense { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    GlobalAvgPool(Var),
    UpsampleNearest { x: Var, factor: usize },
    PixelShuffle { x: Var, r: usize },
    PixelUnshuffle { x: Var, r: usize },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ChannelScale { x: Var, gate: Var },
    Sum(Var),
    Mean(Var),
    WeightedBce { pred: Var, target: Var, omega1: f64, delta: f64 },
    NegLogJaccard { pred: Var, target: Var, eps: f64, per_sample: bool },
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv2d { .. } => OpKind::Conv2d,
            Op::ConvTranspose2d { .. } => OpKind::ConvTranspose2d,
            Op::Dense { .. } => OpKind::Dense,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::GlobalAvgPool(_) => OpKind::GlobalAvgPool,
            Op::UpsampleNearest { .. } => OpKind::UpsampleNearest,
            Op::PixelShuffle { .. } => OpKind::PixelShuffle,
            Op::PixelUnshuffle { .. } => OpKind::PixelUnshuffle,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::ChannelScale { .. } => OpKind::ChannelScale,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::WeightedBce { .. } => OpKind::WeightedBce,
            Op::NegLogJaccard { .. } => OpKind::NegLogJaccard,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    differentiated: bool,
    fault: Option<OpKind>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Logistic function saturated to the open interval (0, 1).
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    let one = T::one();
    let y = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    let hi = one - T::epsilon() / (one + one);
    y.max(T::min_positive_value()).min(hi)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            differentiated: false,
            fault: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Which ReLU inputs are strictly positive, in tape order. Two forward
    /// passes with equal patterns lie on the same linear piece of every ReLU.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                out.extend(self.value(x).data().iter().map(|&v| v > T::zero()));
            }
        }
        out
    }

    /// Scales the backward contribution of every op of `kind` by 1.1.
    /// Only meant for exercising the gradient checker.
    #[doc(hidden)]
    pub fn corrupt_backward(&mut self, kind: OpKind) {
        self.fault = Some(kind);
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn kind(&self, v: Var) -> OpKind {
        self.nodes[v.0].op.kind()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[Var]) -> Var {
        debug_assert!(
            !inputs.iter().all(|v| self.value(*v).is_finite()) || value.is_finite(),
            "{:?} produced non-finite output from finite inputs",
            op.kind()
        );
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != sb.len() {
            return Err(TensorError::ShapeMismatch {
                op,
                axis: "rank",
                expected: sa.len(),
                found: sb.len(),
            });
        }
        for (i, (&x, &y)) in sa.iter().zip(sb).enumerate() {
            if x != y {
                return Err(TensorError::ShapeMismatch {
                    op,
                    axis: AXIS_NAMES.get(i).copied().unwrap_or("axis"),
                    expected: x,
                    found: y,
                });
            }
        }
        Ok(())
    }

    /// 2-D cross-correlation with zero padding. `w` is `[cout, cin, kh, kw]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        const OP: &str = "conv2d";
        let (n, cin, h, wd) = self.value(x).dims4(OP)?;
        let (cout, wcin, kh, kw) = self.value(w).dims4(OP)?;
        check_eq(OP, "input channels", wcin, cin)?;
        check_bias(OP, self.value(b), cout)?;
        let geom = ConvGeom::new(OP, cin, (h, wd), (kh, kw), stride, pad)?;
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            n,
            &geom,
            self.value(w).data(),
            self.value(b).data(),
            cout,
        );
        let value = Tensor::new(vec![n, cout, geom.out_h, geom.out_w], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, &[x, w, b]))
    }

    /// Transposed convolution, the adjoint of [`Tape::conv2d`]. `w` is
    /// `[cin, cout, kh, kw]`; output extent is `(h - 1) * stride - 2 * pad + kh`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        const OP: &str = "conv_transpose2d";
        let (n, cin, h, wd) = self.value(x).dims4(OP)?;
        let (wcin, cout, kh, kw) = self.value(w).dims4(OP)?;
        check_eq(OP, "input channels", wcin, cin)?;
        check_bias(OP, self.value(b), cout)?;
        if stride == 0 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                msg: "stride must be positive".into(),
            });
        }
        let full_h = (h - 1) * stride + kh;
        let full_w = (wd - 1) * stride + kw;
        if full_h <= 2 * pad || full_w <= 2 * pad {
            return Err(TensorError::InvalidArgument {
                op: OP,
                msg: format!("padding {pad} leaves an empty output"),
            });
        }
        let geom = ConvGeom::new(
            OP,
            cout,
            (full_h - 2 * pad, full_w - 2 * pad),
            (kh, kw),
            stride,
            pad,
        )?;
        debug_assert_eq!((geom.out_h, geom.out_w), (h, wd));
        let out = kernels::conv_transpose2d_forward(
            self.value(x).data(),
            n,
            cin,
            &geom,
            self.value(w).data(),
            self.value(b).data(),
        );
        let value = Tensor::new(vec![n, cout, geom.h, geom.w], out)?;
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, geom }, &[x, w, b]))
    }

    /// Fully connected layer `y = x w^T + b`, `x: [n, cin]`, `w: [cout, cin]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        const OP: &str = "dense";
        let (n, cin) = self.value(x).dims2(OP)?;
        let (cout, wcin) = self.value(w).dims2(OP)?;
        check_eq(OP, "input features", wcin, cin)?;
        check_bias(OP, self.value(b), cout)?;
        let mut out = Vec::with_capacity(n * cout);
        for _ in 0..n {
            out.extend_from_slice(self.value(b).data());
        }
        kernels::gemm_nt(n, cout, cin, self.value(x).data(), self.value(w).data(), &mut out);
        let value = Tensor::new(vec![n, cout], out)?;
        Ok(self.push(value, Op::Dense { x, w, b }, &[x, w, b]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x), &[x])
    }

    /// Mean over the spatial axes: `[n, c, h, w] -> [n, c]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, TensorError> {
        let (n, c, h, w) = self.value(x).dims4("global_avg_pool")?;
        let plane = h * w;
        let inv = T::one() / T::from_f64(plane as f64);
        let data = self
            .value(x)
            .data()
            .chunks_exact(plane)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let value = Tensor::new(vec![n, c], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(x), &[x]))
    }

    /// Nearest-neighbour upsampling by an integer factor (exact replication).
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var, TensorError> {
        const OP: &str = "upsample_nearest";
        if factor == 0 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                msg: "factor must be positive".into(),
            });
        }
        let (n, c, h, w) = self.value(x).dims4(OP)?;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(src.len() * factor * factor);
        for plane in src.chunks_exact(h * w) {
            out.extend(kernels::upsample_index((h, w), factor).map(|i| plane[i]));
        }
        let value = Tensor::new(vec![n, c, h * factor, w * factor], out)?;
        Ok(self.push(value, Op::UpsampleNearest { x, factor }, &[x]))
    }

    /// Sub-pixel rearrangement `[n, c*r*r, h, w] -> [n, c, h*r, w*r]` with
    /// `out[n, c, h*r+a, w*r+b] = x[n, c*r*r + a*r + b, h, w]`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var, TensorError> {
        const OP: &str = "pixel_shuffle";
        let (n, c, h, w) = self.value(x).dims4(OP)?;
        if r == 0 || c % (r * r) != 0 {
            return Err(TensorError::Indivisible {
                op: OP,
                axis: "channel",
                extent: c,
                divisor: r * r,
            });
        }
        let c_out = c / (r * r);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(src.len());
        for sample in src.chunks_exact(c * h * w) {
            out.extend(kernels::pixel_shuffle_index((c_out, h, w), r).map(|i| sample[i]));
        }
        let value = Tensor::new(vec![n, c_out, h * r, w * r], out)?;
        Ok(self.push(value, Op::PixelShuffle { x, r }, &[x]))
    }

    /// Inverse of [`Tape::pixel_shuffle`].
    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var, TensorError> {
        const OP: &str = "pixel_unshuffle";
        let (n, c, h, w) = self.value(x).dims4(OP)?;
        if r == 0 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                msg: "factor must be positive".into(),
            });
        }
        for (axis, extent) in [("height", h), ("width", w)] {
            if extent % r != 0 {
                return Err(TensorError::Indivisible {
                    op: OP,
                    axis,
                    extent,
                    divisor: r,
                });
            }
        }
        let (ih, iw) = (h / r, w / r);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for (s, sample) in src.chunks_exact(c * h * w).enumerate() {
            let dst = &mut out[s * c * h * w..(s + 1) * c * h * w];
            for (o, i) in kernels::pixel_shuffle_index((c, ih, iw), r).enumerate() {
                dst[i] = sample[o];
            }
        }
        let value = Tensor::new(vec![n, c * r * r, ih, iw], out)?;
        Ok(self.push(value, Op::PixelUnshuffle { x, r }, &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let k = T::from_f64(s);
        let value = self.value(x).map(|v| v * k);
        self.push(value, Op::Scale(x, s), &[x])
    }

    /// Multiplies every `[h, w]` plane of `x: [n, c, h, w]` by `gate[n, c]`.
    pub fn channel_scale(&mut self, x: Var, gate: Var) -> Result<Var, TensorError> {
        const OP: &str = "channel_scale";
        let (n, c, h, w) = self.value(x).dims4(OP)?;
        let (gn, gc) = self.value(gate).dims2(OP)?;
        check_eq(OP, "batch", gn, n)?;
        check_eq(OP, "channel", gc, c)?;
        let g = self.value(gate).data();
        let mut out = self.value(x).data().to_vec();
        for (plane, &gv) in out.chunks_exact_mut(h * w).zip(g) {
            for v in plane {
                *v = *v * gv;
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(value, Op::ChannelScale { x, gate }, &[x, gate]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / T::from_f64(t.numel() as f64));
        self.push(value, Op::Mean(x), &[x])
    }

    /// Mean of `(w1 - 1) y log p - w1 (1 - y) log(1 - p)` with `p` clamped to
    /// `[delta, 1 - delta]`. `target` is treated as a constant.
    pub fn weighted_bce(
        &mut self,
        pred: Var,
        target: Var,
        omega1: f64,
        delta: f64,
    ) -> Result<Var, TensorError> {
        self.same_shape("weighted_bce", pred, target)?;
        let v = weighted_bce_value(
            self.value(pred).data(),
            self.value(target).data(),
            T::from_f64(omega1),
            T::from_f64(delta),
        );
        Ok(self.push(
            Tensor::scalar(v),
            Op::WeightedBce {
                pred,
                target,
                omega1,
                delta,
            },
            &[pred],
        ))
    }

    /// `-log` of the soft Jaccard index `(I + eps) / (U + eps)`. With
    /// `per_sample`, the index is computed for each leading-axis slice and the
    /// negative logs are averaged; otherwise one index is pooled over all
    /// elements. `target` is treated as a constant.
    pub fn neg_log_jaccard(
        &mut self,
        pred: Var,
        target: Var,
        eps: f64,
        per_sample: bool,
    ) -> Result<Var, TensorError> {
        self.same_shape("neg_log_jaccard", pred, target)?;
        let groups = jaccard_groups(self.value(pred), per_sample);
        let e = T::from_f64(eps);
        let p = self.value(pred).data();
        let y = self.value(target).data();
        let len = p.len() / groups;
        let total: T = (0..groups)
            .map(|g| {
                let (i, u) = jaccard_sums(&p[g * len..(g + 1) * len], &y[g * len..(g + 1) * len]);
                (u + e).ln() - (i + e).ln()
            })
            .sum();
        let value = Tensor::scalar(total / T::from_f64(groups as f64));
        Ok(self.push(
            value,
            Op::NegLogJaccard {
                pred,
                target,
                eps,
                per_sample,
            },
            &[pred],
        ))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&mut self, root: Var) -> Result<Gradients<T>, GradError> {
        if self.differentiated {
            return Err(GradError::AlreadyBackpropagated);
        }
        let root_shape = self.value(root).shape().to_vec();
        if root_shape.iter().product::<usize>() != 1 {
            return Err(GradError::NotScalar(root_shape));
        }
        if !self.nodes[root.0].needs_grad {
            return Err(GradError::Detached);
        }
        self.differentiated = true;

        let mut grads: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::ones(&root_shape));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            let mut contributions = self.node_backward(&node.op, &node.value, &dy);
            if self.fault == Some(node.op.kind()) {
                for (_, g) in &mut contributions {
                    g.scale_in_place(T::from_f64(1.1));
                }
            }
            for (v, g) in contributions {
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            // Interior gradients are consumed; leaves keep theirs.
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn node_backward(&self, op: &Op, out: &Tensor<T>, dy: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let mut res = Vec::new();
        match *op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let xv = self.value(x);
                let wv = self.value(w);
                let n = xv.shape()[0];
                let cout = wv.shape()[0];
                let mut dx = self.wants(x).then(|| Tensor::zeros(xv.shape()));
                let mut dw = self.wants(w).then(|| Tensor::zeros(wv.shape()));
                let mut db = self.wants(b).then(|| Tensor::zeros(&[cout]));
                kernels::conv2d_backward(
                    xv.data(),
                    n,
                    &geom,
                    wv.data(),
                    cout,
                    dy.data(),
                    ConvGrads {
                        dx: dx.as_mut().map(Tensor::data_mut),
                        dw: dw.as_mut().map(Tensor::data_mut),
                        db: db.as_mut().map(Tensor::data_mut),
                    },
                );
                push_some(&mut res, x, dx);
                push_some(&mut res, w, dw);
                push_some(&mut res, b, db);
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let xv = self.value(x);
                let wv = self.value(w);
                let (n, cin) = (xv.shape()[0], xv.shape()[1]);
                let mut dx = self.wants(x).then(|| Tensor::zeros(xv.shape()));
                let mut dw = self.wants(w).then(|| Tensor::zeros(wv.shape()));
                let mut db = self.wants(b).then(|| Tensor::zeros(&[geom.channels]));
                kernels::conv_transpose2d_backward(
                    xv.data(),
                    n,
                    cin,
                    &geom,
                    wv.data(),
                    dy.data(),
                    ConvGrads {
                        dx: dx.as_mut().map(Tensor::data_mut),
                        dw: dw.as_mut().map(Tensor::data_mut),
                        db: db.as_mut().map(Tensor::data_mut),
                    },
                );
                push_some(&mut res, x, dx);
                push_some(&mut res, w, dw);
                push_some(&mut res, b, db);
            }
            Op::Dense { x, w, b } => {
                let xv = self.value(x);
                let wv = self.value(w);
                let (n, cin) = (xv.shape()[0], xv.shape()[1]);
                let cout = wv.shape()[0];
                if self.wants(x) {
                    let mut dx = Tensor::zeros(xv.shape());
                    kernels::gemm_nn(n, cin, cout, dy.data(), wv.data(), dx.data_mut());
                    res.push((x, dx));
                }
                if self.wants(w) {
                    let mut dw = Tensor::zeros(wv.shape());
                    kernels::gemm_tn(cout, cin, n, dy.data(), xv.data(), dw.data_mut());
                    res.push((w, dw));
                }
                if self.wants(b) {
                    let mut db = Tensor::zeros(&[cout]);
                    for row in dy.data().chunks_exact(cout) {
                        for (d, &g) in db.data_mut().iter_mut().zip(row) {
                            *d = *d + g;
                        }
                    }
                    res.push((b, db));
                }
            }
            Op::Relu(x) => {
                let data = self
                    .value(x)
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                res.push((x, Tensor::new(dy.shape().to_vec(), data).expect("shape")));
            }
            Op::Sigmoid(x) => {
                let data = out
                    .data()
                    .iter()
                    .zip(dy.data())
                    .map(|(&y, &g)| g * y * (T::one() - y))
                    .collect();
                res.push((x, Tensor::new(dy.shape().to_vec(), data).expect("shape")));
            }
            Op::GlobalAvgPool(x) => {
                let xv = self.value(x);
                let plane = xv.shape()[2] * xv.shape()[3];
                let inv = T::one() / T::from_f64(plane as f64);
                let mut dx = Vec::with_capacity(xv.numel());
                for &g in dy.data() {
                    dx.extend(std::iter::repeat_n(g * inv, plane));
                }
                res.push((x, Tensor::new(xv.shape().to_vec(), dx).expect("shape")));
            }
            Op::UpsampleNearest { x, factor } => {
                let xv = self.value(x);
                let (h, w) = (xv.shape()[2], xv.shape()[3]);
                let mut dx = Tensor::zeros(xv.shape());
                let out_plane = h * w * factor * factor;
                for (dst, src) in dx
                    .data_mut()
                    .chunks_exact_mut(h * w)
                    .zip(dy.data().chunks_exact(out_plane))
                {
                    for (i, &g) in kernels::upsample_index((h, w), factor).zip(src) {
                        dst[i] = dst[i] + g;
                    }
                }
                res.push((x, dx));
            }
            Op::PixelShuffle { x, r } => {
                let xv = self.value(x);
                let (c, h, w) = (xv.shape()[1], xv.shape()[2], xv.shape()[3]);
                let mut dx = Tensor::zeros(xv.shape());
                let sz = c * h * w;
                for (dst, src) in dx.data_mut().chunks_exact_mut(sz).zip(dy.data().chunks_exact(sz)) {
                    for (i, &g) in kernels::pixel_shuffle_index((c / (r * r), h, w), r).zip(src) {
                        dst[i] = g;
                    }
                }
                res.push((x, dx));
            }
            Op::PixelUnshuffle { x, r } => {
                let xv = self.value(x);
                let (c, h, w) = (xv.shape()[1], xv.shape()[2], xv.shape()[3]);
                let sz = c * h * w;
                let mut dx = Vec::with_capacity(xv.numel());
                for src in dy.data().chunks_exact(sz) {
                    dx.extend(kernels::pixel_shuffle_index((c, h / r, w / r), r).map(|i| src[i]));
                }
                res.push((x, Tensor::new(xv.shape().to_vec(), dx).expect("shape")));
            }
            Op::Add(a, b) => {
                if self.wants(a) {
                    res.push((a, dy.clone()));
                }
                if self.wants(b) {
                    res.push((b, dy.clone()));
                }
            }
            Op::Mul(a, b) => {
                let prod = |other: &Tensor<T>| {
                    let d = other.data().iter().zip(dy.data()).map(|(&o, &g)| o * g).collect();
                    Tensor::new(dy.shape().to_vec(), d).expect("shape")
                };
                if self.wants(a) {
                    res.push((a, prod(self.value(b))));
                }
                if self.wants(b) {
                    res.push((b, prod(self.value(a))));
                }
            }
            Op::Scale(x, s) => {
                let k = T::from_f64(s);
                res.push((x, dy.map(|g| g * k)));
            }
            Op::ChannelScale { x, gate } => {
                let xv = self.value(x);
                let gv = self.value(gate);
                let plane = xv.shape()[2] * xv.shape()[3];
                if self.wants(x) {
                    let mut dx = dy.clone();
                    for (p, &g) in dx.data_mut().chunks_exact_mut(plane).zip(gv.data()) {
                        for v in p {
                            *v = *v * g;
                        }
                    }
                    res.push((x, dx));
                }
                if self.wants(gate) {
                    let dg = xv
                        .data()
                        .chunks_exact(plane)
                        .zip(dy.data().chunks_exact(plane))
                        .map(|(xp, gp)| xp.iter().zip(gp).map(|(&a, &b)| a * b).sum())
                        .collect();
                    res.push((gate, Tensor::new(gv.shape().to_vec(), dg).expect("shape")));
                }
            }
            Op::Sum(x) => {
                let g = dy.data()[0];
                res.push((x, Tensor::full(self.value(x).shape(), g)));
            }
            Op::Mean(x) => {
                let xv = self.value(x);
                let g = dy.data()[0] / T::from_f64(xv.numel() as f64);
                res.push((x, Tensor::full(xv.shape(), g)));
            }
            Op::WeightedBce {
                pred,
                target,
                omega1,
                delta,
            } => {
                let pv = self.value(pred);
                let yv = self.value(target);
                let (w1, d) = (T::from_f64(omega1), T::from_f64(delta));
                let one = T::one();
                let scale = dy.data()[0] / T::from_f64(pv.numel() as f64);
                let data = pv
                    .data()
                    .iter()
                    .zip(yv.data())
                    .map(|(&p, &y)| {
                        if p < d || p > one - d {
                            T::zero()
                        } else {
                            scale * ((w1 - one) * y / p + w1 * (one - y) / (one - p))
                        }
                    })
                    .collect();
                res.push((pred, Tensor::new(pv.shape().to_vec(), data).expect("shape")));
            }
            Op::NegLogJaccard {
                pred,
                target,
                eps,
                per_sample,
            } => {
                let pv = self.value(pred);
                let yv = self.value(target);
                let groups = jaccard_groups(pv, per_sample);
                let len = pv.numel() / groups;
                let e = T::from_f64(eps);
                let scale = dy.data()[0] / T::from_f64(groups as f64);
                let mut dp = Vec::with_capacity(pv.numel());
                for g in 0..groups {
                    let p = &pv.data()[g * len..(g + 1) * len];
                    let y = &yv.data()[g * len..(g + 1) * len];
                    let (i, u) = jaccard_sums(p, y);
                    let (inv_u, inv_i) = (T::one() / (u + e), T::one() / (i + e));
                    dp.extend(y.iter().map(|&yy| scale * ((T::one() - yy) * inv_u - yy * inv_i)));
                }
                res.push((pred, Tensor::new(pv.shape().to_vec(), dp).expect("shape")));
            }
        }
        res
    }
}

const AXIS_NAMES: [&str; 4] = ["batch", "channel", "height", "width"];

fn check_eq(op: &'static str, axis: &'static str, expected: usize, found: usize) -> Result<(), TensorError> {
    if expected == found {
        Ok(())
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            axis,
            expected,
            found,
        })
    }
}

fn check_bias<T: Real>(op: &'static str, b: &Tensor<T>, cout: usize) -> Result<(), TensorError> {
    match b.shape() {
        [c] => check_eq(op, "bias length", cout, *c),
        s => Err(TensorError::Rank {
            op,
            expected: 1,
            shape: s.to_vec(),
        }),
    }
}

fn push_some<T>(res: &mut Vec<(Var, Tensor<T>)>, v: Var, g: Option<Tensor<T>>) {
    if let Some(g) = g {
        res.push((v, g));
    }
}

fn jaccard_groups<T: Real>(pred: &Tensor<T>, per_sample: bool) -> usize {
    if per_sample && pred.rank() > 1 {
        pred.shape()[0].max(1)
    } else {
        1
    }
}

/// Soft intersection `sum(y*p)` and union `sum(y) + sum(p) - sum(y*p)`.
pub(crate) fn jaccard_sums<T: Real>(p: &[T], y: &[T]) -> (T, T) {
    let mut inter = T::zero();
    let mut sy = T::zero();
    let mut sp = T::zero();
    for (&pp, &yy) in p.iter().zip(y) {
        inter = inter + pp * yy;
        sy = sy + yy;
        sp = sp + pp;
    }
    (inter, sy + sp - inter)
}

pub(crate) fn weighted_bce_value<T: Real>(p: &[T], y: &[T], omega1: T, delta: T) -> T {
    let one = T::one();
    let total: T = p
        .iter()
        .zip(y)
        .map(|(&pp, &yy)| {
            let pc = pp.max(delta).min(one - delta);
            (omega1 - one) * yy * pc.ln() - omega1 * (one - yy) * (one - pc).ln()
        })
        .sum();
    total / T::from_f64(p.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64_slice(shape, v).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 7.0]), true);
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 6]);
    }

    #[test]
    fn half_sum_of_squares_gradient_is_x() {
        let vals = [1.5, -2.0, 0.25, 4.0];
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[4], &vals), true);
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq);
        let half = tape.scale(s, 0.5);
        let g = tape.backward(half).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &vals);
    }

    #[test]
    fn backward_rejects_non_scalar_detached_and_repeat() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]), true);
        assert_eq!(tape.backward(x).unwrap_err(), GradError::NotScalar(vec![2]));

        let c = tape.constant(t(&[2], &[1.0, 2.0]));
        let s = tape.sum(c);
        assert_eq!(tape.backward(s).unwrap_err(), GradError::Detached);

        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.backward(s).unwrap_err(), GradError::AlreadyBackpropagated);
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[3], &[-1.0, 2.0, 0.0]));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 2.0, 0.0]);
        let s = tape.sigmoid(x);
        assert_eq!(tape.value(s).data()[2], 0.5);
    }

    #[test]
    fn sigmoid_saturates_inside_open_interval() {
        for x in [-1e3, -40.0, 40.0, 1e3, f64::MAX, -f64::MAX] {
            let y = sigmoid(x);
            assert!(y > 0.0 && y < 1.0, "sigmoid({x}) = {y}");
            let y32 = sigmoid(x as f32);
            assert!(y32 > 0.0 && y32 < 1.0, "sigmoid32({x}) = {y32}");
        }
    }

    #[test]
    fn sigmoid_matches_high_precision_reference() {
        // Reference values computed with 50-digit arithmetic.
        let cases: [(f64, f64); 5] = [
            (-40.0, 4.248354255291589e-18),
            (-5.0, 0.0066928509242848554),
            (0.3, 0.574442516811659),
            (5.0, 0.9933071490757152),
            (40.0, 1.0),
        ];
        for (x, want) in cases {
            let got = sigmoid(x);
            assert!(((got - want) / want).abs() < 1e-15, "sigmoid({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn shape_errors_name_the_axis() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[3, 5, 3, 3]));
        let b = tape.constant(Tensor::zeros(&[3]));
        let err = tape.conv2d(x, w, b, 1, 1).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "conv2d",
                axis: "input channels",
                expected: 5,
                found: 2
            }
        );
        let y = tape.constant(Tensor::zeros(&[1, 2, 4, 5]));
        let err = tape.add(x, y).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { axis: "width", .. }));
    }

    #[test]
    fn pixel_shuffle_rejects_indivisible_channels() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 6, 2, 2]));
        assert!(matches!(
            tape.pixel_shuffle(x, 2).unwrap_err(),
            TensorError::Indivisible { axis: "channel", extent: 6, divisor: 4, .. }
        ));
        let y = tape.constant(Tensor::zeros(&[1, 1, 3, 4]));
        assert!(matches!(
            tape.pixel_unshuffle(y, 2).unwrap_err(),
            TensorError::Indivisible { axis: "height", .. }
        ));
    }

    #[test]
    fn gradients_accumulate_over_paths() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(t(&[2], &[3.0, -1.0]), true);
        let y = tape.add(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        let s = tape.sum(z);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 3.0]);
    }
}
