//! Finite-difference verification of every differentiable op and network
//! block at 64-bit precision.

use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::gradcheck::{GradCheckReport, GradChecker};
use crate::loss::{combined_loss_on_tape, JaccardMode, LossWeights};
use crate::nn::{DecoderBlock, Duc, FeatureFusion, FeaturePyramid, FedNet, NetworkSpec, Rcb, SeBlock};
use crate::param::{Bound, ParamStore};
use crate::tape::{OpKind, Tape, Var};
use crate::tensor::Tensor;

pub const TOLERANCE: f64 = 1e-4;

/// Coordinates sampled per input tensor for the block-level checks.
const BLOCK_COORDS: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: &'static str,
    /// Distinct input shapes exercised.
    pub shapes: usize,
    pub checked: usize,
    /// Coordinates skipped at ReLU kinks.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub pass: bool,
    pub failure: Option<String>,
}

type Case = fn(&GradChecker, usize, &mut ChaCha8Rng) -> Result<GradCheckReport, Error>;

/// Weighted sum with fixed random weights, so no gradient cancels by symmetry.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var, Error> {
    project_in(tape, y, seed, (-1.0, 1.0))
}

fn project_in(tape: &mut Tape<f64>, y: Var, seed: u64, range: (f64, f64)) -> Result<Var, Error> {
    let shape = tape.value(y).shape().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = tape.constant(Tensor::uniform(&shape, range.0, range.1, &mut rng));
    let m = tape.mul(y, r)?;
    Ok(tape.sum(m))
}

fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

/// Values bounded away from zero so no coordinate sits on a ReLU kink.
fn rand_nonzero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = Tensor::<f64>::uniform(shape, 0.1, 1.0, rng);
    for v in t.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// Fresh parameters have zero biases, which puts units exactly on ReLU kinks.
fn randomize_biases(store: &ParamStore<f64>, values: &mut [Tensor<f64>]) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (p, v) in store.iter().zip(values) {
        if p.name.ends_with(".b") {
            for b in v.data_mut() {
                *b = rng.gen_range(-0.1..0.1);
            }
        }
    }
}

/// Checks `block` with the input followed by every parameter as leaves.
fn check_block(
    checker: &GradChecker,
    store: &ParamStore<f64>,
    x: Tensor<f64>,
    forward: impl Fn(&mut Tape<f64>, &Bound, Var) -> Result<Var, Error>,
) -> Result<GradCheckReport, Error> {
    let mut inputs = vec![x];
    inputs.extend(store.values());
    randomize_biases(store, &mut inputs[1..]);
    let c = checker.sampled(BLOCK_COORDS, checker.seed);
    let c = GradChecker { fault: checker.fault, ..c };
    // Centre on the unperturbed output so the scalar stays near zero and its
    // rounding does not swamp the finite differences.
    let base = {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        let y = forward(&mut t, &Bound::from_vars(vars[1..].to_vec()), vars[0])?;
        t.value(y).clone()
    };
    c.check(
        |t: &mut Tape<f64>, v: &[Var]| {
            let p = Bound::from_vars(v[1..].to_vec());
            let y = forward(t, &p, v[0])?;
            let y0 = t.constant(base.map(|b| -b));
            let d = t.add(y, y0)?;
            // Same-signed weights keep the deep-layer gradients from cancelling
            // down to the size of the finite-difference noise.
            project_in(t, d, 99, (0.5, 1.5))
        },
        &inputs,
    )
}

/// Three shapes per op; index `k` selects one.
fn conv2d(c: &GradChecker, k: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport, Error> {
    let (xs, ws) = [([1, 2, 5, 5], [3, 2, 3, 3]), ([2, 1, 4, 6], [2, 1, 3, 3]), ([1, 3, 3, 4], [1, 3, 1, 1])][k];
    let inputs = [rand_t(&xs, rng), rand_t(&ws, rng), rand_t(&[ws[0]], rng)];
    c.check(
        |t: &mut Tape<f64>, v: &[Var]| {
            let pad = if ws[2] == 3 { 1 } else { 0 };
            let y = t.conv2d(v[0], v[1], v[2], 1, pad)?;
            project(t, y, 1)
        },
        &inputs,
    )
}

fn conv2d_strided(c: &GradChecker, k: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport, Error> {
    let (xs, ws) = [([1, 2, 6, 6], [2, 2, 3, 3]), ([2, 1, 5, 4], [3, 1, 3, 3]), ([1, 2, 4, 4], [2, 2, 1, 1])][k];
    let inputs = [rand_t(&xs, rng), rand_t(&ws, rng), rand_t(&[ws[0]], rng)];
    c.check(
        |t: &mut Tape<f64>, v: &[Var]| {
            let pad = if ws[2] == 3 { 1 } else { 0 };
            let y = t.conv2d(v[0], v[1], v[2], 2, pad)?;
            project(t, y, 2)
        },
        &inputs,
    )
}

fn conv_transpose2d(c: &GradChecker, k: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport, Error> {
    let (xs, ws, stride, pad) = [
        ([1, 2, 3, 3], [2, 3, 3, 3], 2, 1),
        ([2, 1, 2, 2], [1, 2, 2, 2], 2, 0),
        ([1, 3, 3, 2], [3, 1, 3, 3], 1, 1),
    ][k];
    let inputs = [rand_t(&xs, rng), rand_t(&ws, rng), rand_t(&[ws[1]], rng)];
    c.check(
        |t: &mut Tape<f64>, v: &[Var]| {
            let y = t.conv_transpose2d(v[0], v[1], v[2], stride, pad)?;
            project(t, y, 3)
        },
        &inputs,
    )
}

fn dense(c: &GradChecker, k: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport, Error> {
    let (n, cin, cout) = [(1, 4, 3), (3, 2, 5), (2, 6, 1)][k];
    let inputs = [rand_t(&[n, cin], rng), rand_t(&[cout, cin], rng), rand_t(&[cout], rng)];
    c.check(
        |t: &mut Tape<f64>, v: &[Var]| {
            let y = t.dense(v[0], v[1], v[2])?;
            let y = t.sigmoid(y);
            project(t, y, 4)
        },
        &inputs,
    )
}

const ELEMENTWISE_SHAPES: [&[usize]; 3] = [&[7], &[2, 3, 4], &[1, 2, 3, 3]];

fn relu(c: &GradChecker, k: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport, Error> {
    let x = rand_nonzero(ELEMENTWISE_SHAPES[k], rng);
    c.check(
        |t: &mut Tape<f64>, v: &[Var]| {
            let y = t.relu(v[0]);
            project(t, y, 5)
        },
        &[x],
    )
}

fn sigmoid(c: &GradChecker, k: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport, Error> {
    let x = Tensor::uniform(ELEMENTWISE_SHAPES[k], -6.0, 6.0, rng);
    c.check(
        |t: &mut Tape<f64>, v: &[Var]| {
            let y = t.sigmoid(v[0]);
            project(t, y, 6)
        },
        &[x],
    )
}

const MAP_SHAPES: [[usize; 4]; 3] = [[1, 2, 3, 3], [2, 3, 2, 4], [1, 1, 5, 2]];

fn global_avg_pool(c: &GradChecker, k: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport, Error> {
    let x = rand_t(&MAP_SHAPES[k], rng);
    c.check(
        |t: &mut Tape<f64>, v: &[Var]| {
            let y = t.global_avg_pool(v[0])?;
            project(t, y, 7)
        },
        &[x],
    )
}

fn upsample_nearest(c: &GradChecker, k: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport, Error> {
    let x = rand_t(&MAP_SHAPES[k], rng);
    c.check(
        |t: &mut Tape<f64>, v: &[Var]| {
            let y = t.upsample_nearest(v[0], k + 1)?;
            project(t, y, 8)
        },
        &[x],
    )
}

fn pixel_shuffle(c: &GradChecker, k: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport, Error> {
    let (shape, r) = [([1, 4, 2, 3], 2), ([2, 9, 2, 2], 3), ([1, 8, 3, 1], 2)][k];
    let x = rand_t(&shape, rng);
    c.check(
        |t: &mut Tape<f64>, v: &[Var]| {
            let y = t.pixel_shuffle(v[0], r)?;
            project(t, y, 9)
        },
        &[x],
    )
}

fn pixel_unshuffle(c: &GradChecker, k: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport, Error> {
    let (shape, r) = [([1, 1, 4, 6], 2), ([2, 1, 6, 3], 3), ([1, 2, 2, 4], 2)][k];
    let x = rand_t(&shape, rng);
    c.check(
        |t: &mut Tape<f64>, v: &[Var]| {
            let y = t.pixel_unshuffle(v[0], r)?;
            project(t, y, 10)
        },
        &[x],
    )
}

fn channel_scale(c: &GradChecker, k: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport, Error> {
    let s = MAP_SHAPES[k];
    let inputs = [rand_t(&s, rng), rand_t(&[s[0], s[1]], rng)];
    c.check(
        |t: &mut Tape<f64>, v: &[Var]| {
            let y = t.channel_scale(v[0], v[1])?;
            project(t, y, 11)
        },
        &inputs,
    )
}

fn se_block(c: &GradChecker, k: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport, Error> {
    let (shape, r) = [([1, 4, 3, 3], 2), ([2, 8, 2, 2], 4), ([1, 6, 2, 3], 3)][k];
    let mut store = ParamStore::new();
    let se = SeBlock::new(&mut store, "se", shape[1], r, rng)?;
    check_block(c, &store, rand_t(&shape, rng), |t, p, x| Ok(se.forward(t, p, x)?))
}

fn rcb(c: &GradChecker, k: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport, Error> {
    let shape = [[1, 2, 4, 4], [2, 3, 3, 3], [1, 4, 2, 5]][k];
    let mut store = ParamStore::new();
    let b = Rcb::new(&mut store, "rcb", shape[1], rng);
    check_block(c, &store, rand_t(&shape, rng), |t, p, x| Ok(b.forward(t, p, x)?))
}

fn duc_block(c: &GradChecker, k: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport, Error> {
    let (shape, cout, r) = [([1, 3, 3, 3], 2, 2), ([2, 2, 2, 2], 1, 3), ([1, 4, 2, 3], 3, 2)][k];
    let mut store = ParamStore::new();
    let b = Duc::new(&mut store, "duc", shape[1], cout, r, rng);
    check_block(c, &store, rand_t(&shape, rng), |t, p, x| Ok(b.forward(t, p, x)?))
}

fn decoder_block(c: &GradChecker, k: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport, Error> {
    let (shape, cout) = [([1, 4, 2, 2], 2), ([2, 8, 2, 3], 4), ([1, 4, 3, 3], 4)][k];
    let mut store = ParamStore::new();
    let b = DecoderBlock::new(&mut store, "dec", shape[1], cout, rng)?;
    check_block(c, &store, rand_t(&shape, rng), |t, p, x| Ok(b.forward(t, p, x)?))
}

fn feature_fuse(c: &GradChecker, k: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport, Error> {
    let (n, base, h, w, se) = [(1, 2, 8, 8, Some(2)), (2, 4, 8, 16, Some(4)), (1, 2, 16, 8, None)][k];
    let channels = [base, 2 * base, 4 * base, 8 * base];
    let mut store = ParamStore::new();
    let ff = FeatureFusion::new(&mut store, "ff", &channels, se, rng)?;
    let levels: Vec<Tensor<f64>> = (0..4)
        .map(|l| rand_t(&[n, channels[l], h >> l, w >> l], rng))
        .collect();
    let n_params = store.len();
    let mut inputs = store.values();
    randomize_biases(&store, &mut inputs);
    inputs.extend(levels);
    let checker = GradChecker {
        fault: c.fault,
        ..c.sampled(BLOCK_COORDS, c.seed)
    };
    checker.check(
        |t: &mut Tape<f64>, v: &[Var]| {
            let p = Bound::from_vars(v[..n_params].to_vec());
            let pyramid = FeaturePyramid {
                levels: v[n_params..].to_vec(),
            };
            let out = ff.forward(t, &p, &pyramid)?;
            let mut acc: Option<Var> = None;
            for (l, &f) in out.fused.iter().enumerate() {
                let s = project(t, f, 20 + l as u64)?;
                acc = Some(match acc {
                    Some(a) => t.add(a, s)?,
                    None => s,
                });
            }
            Ok(acc.expect("four levels"))
        },
        &inputs,
    )
}

fn fednet_forward(c: &GradChecker, k: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport, Error> {
    let spec = NetworkSpec::fednet(4).with_se_reduction(4);
    let spec = [spec, NetworkSpec { enable_duc: false, ..spec }, spec][k];
    let shape = [[1, 3, 32, 32], [1, 3, 32, 64], [2, 3, 32, 32]][k];
    let mut store = ParamStore::new();
    let net = FedNet::new(spec, &mut store, rng)?;
    // He gain: without it activations shrink through the ReLU depth and the
    // squeeze-excitation gradients sink to ~1e-9.
    for p in store.iter_mut() {
        if p.name.ends_with(".w") {
            p.value.scale_in_place(std::f64::consts::SQRT_2);
        }
    }
    check_block(c, &store, Tensor::uniform(&shape, 0.0, 1.0, rng), |t, p, x| {
        Ok(net.forward(t, p, x)?)
    })
}

fn combined_loss(c: &GradChecker, k: usize, rng: &mut ChaCha8Rng) -> Result<GradCheckReport, Error> {
    let shape = [[1, 1, 3, 3], [3, 1, 2, 4], [2, 1, 4, 4]][k];
    let logits = Tensor::uniform(&shape, -3.0, 3.0, rng);
    let mut y = Tensor::<f64>::zeros(&shape);
    for v in y.data_mut() {
        *v = if rng.gen_bool(0.4) { 1.0 } else { 0.0 };
    }
    let w = LossWeights::new(0.3 + 0.2 * k as f64, 1.0, 1e-15, 1e-7).expect("valid weights");
    let mode = if k == 1 { JaccardMode::Pooled } else { JaccardMode::PerSlice };
    c.check(
        |t: &mut Tape<f64>, v: &[Var]| {
            let p = t.sigmoid(v[0]);
            let yv = t.constant(y.clone());
            Ok(combined_loss_on_tape(t, p, yv, &w, mode)?)
        },
        &[logits],
    )
}

/// `(name, check, backward op that a fault in should break it)`.
pub const CHECKS: &[(&str, Case, OpKind)] = &[
    ("conv2d", conv2d, OpKind::Conv2d),
    ("conv2d_strided", conv2d_strided, OpKind::Conv2d),
    ("conv_transpose2d", conv_transpose2d, OpKind::ConvTranspose2d),
    ("dense", dense, OpKind::Dense),
    ("relu", relu, OpKind::Relu),
    ("sigmoid", sigmoid, OpKind::Sigmoid),
    ("global_avg_pool", global_avg_pool, OpKind::GlobalAvgPool),
    ("upsample_nearest", upsample_nearest, OpKind::UpsampleNearest),
    ("pixel_shuffle", pixel_shuffle, OpKind::PixelShuffle),
    ("pixel_unshuffle", pixel_unshuffle, OpKind::PixelUnshuffle),
    ("channel_scale", channel_scale, OpKind::ChannelScale),
    ("se_block", se_block, OpKind::ChannelScale),
    ("rcb", rcb, OpKind::Conv2d),
    ("feature_fuse", feature_fuse, OpKind::UpsampleNearest),
    ("duc_block", duc_block, OpKind::PixelShuffle),
    ("decoder_block", decoder_block, OpKind::ConvTranspose2d),
    ("fednet_forward", fednet_forward, OpKind::Conv2d),
    ("combined_loss", combined_loss, OpKind::NegLogJaccard),
];

/// Runs one named check over its three shapes.
pub fn run_check(name: &str, fault: Option<OpKind>, seed: u64) -> Result<SuiteEntry, Error> {
    let &(name, case, _) = CHECKS
        .iter()
        .find(|(n, _, _)| *n == name)
        .ok_or_else(|| Error::Spec(format!("unknown gradient check `{name}`")))?;
    let mut checker = GradChecker::new(TOLERANCE);
    checker.seed = seed;
    checker.fault = fault;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entry = SuiteEntry {
        name,
        shapes: 0,
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
        pass: true,
        failure: None,
    };
    for k in 0..3 {
        let r = case(&checker, k, &mut rng)?;
        entry.shapes += 1;
        entry.checked += r.checked;
        entry.skipped += r.skipped;
        entry.max_rel_err = entry.max_rel_err.max(r.max_rel_err);
        if !r.pass {
            entry.pass = false;
            entry.failure.get_or_insert(format!("shape {k}: {}", r.failure.unwrap_or_default()));
        }
    }
    // A check that compared almost nothing proves nothing.
    if entry.pass && entry.skipped * 4 > entry.checked + entry.skipped {
        entry.pass = false;
        entry.failure = Some(format!("{} of {} coordinates sat on ReLU kinks", entry.skipped, entry.checked + entry.skipped));
    }
    Ok(entry)
}

pub fn run_suite(fault: Option<OpKind>, seed: u64) -> Result<Vec<SuiteEntry>, Error> {
    CHECKS.iter().map(|(n, _, _)| run_check(n, fault, seed)).collect()
}

pub fn render(entries: &[SuiteEntry]) -> String {
    let mut s = String::from("check\tshapes\tcoords\tskipped\tmax_rel_err\tresult\n");
    for e in entries {
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{:.3e}\t{}",
            e.name,
            e.shapes,
            e.checked,
            e.skipped,
            e.max_rel_err,
            if e.pass { "pass" } else { "FAIL" }
        )
        .unwrap();
    }
    s
}
