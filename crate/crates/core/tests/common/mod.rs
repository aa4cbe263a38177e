//! Brute-force reference implementations shared by the integration tests.
//! Each one is written directly from the definition, without the kernels.
#![allow(dead_code)]

use fednet_core::tape::Tape;
use fednet_core::tensor::Tensor;

pub fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Cross-correlation, `x: [n, ci, h, w]`, `w: [co, ci, kh, kw]`.
pub fn conv2d_ref(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let xv = |a: usize, c: usize, y: isize, xx: isize| -> f64 {
        if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
            0.0
        } else {
            x.data()[((a * ci + c) * h + y as usize) * wd + xx as usize]
        }
    };
    let mut out = vec![0.0; n * co * oh * ow];
    for a in 0..n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = b[o];
                    for c in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (oy * stride + ky) as isize - pad as isize;
                                let xx = (ox * stride + kx) as isize - pad as isize;
                                s += xv(a, c, y, xx) * w.data()[((o * ci + c) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((a * co + o) * oh + oy) * ow + ox] = s;
                }
            }
        }
    }
    t(&[n, co, oh, ow], out)
}

/// Transposed convolution by scattering each input pixel, `w: [ci, co, kh, kw]`.
pub fn conv_transpose2d_ref(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (_, co, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let oh = (h - 1) * stride + kh - 2 * pad;
    let ow = (wd - 1) * stride + kw - 2 * pad;
    let mut out = vec![0.0; n * co * oh * ow];
    for a in 0..n {
        for o in 0..co {
            for i in 0..oh * ow {
                out[(a * co + o) * oh * ow + i] = b[o];
            }
        }
        for c in 0..ci {
            for iy in 0..h {
                for ix in 0..wd {
                    let v = x.data()[((a * ci + c) * h + iy) * wd + ix];
                    for o in 0..co {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (iy * stride + ky) as isize - pad as isize;
                                let xx = (ix * stride + kx) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= oh as isize || xx >= ow as isize {
                                    continue;
                                }
                                out[((a * co + o) * oh + y as usize) * ow + xx as usize] +=
                                    v * w.data()[((c * co + o) * kh + ky) * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    t(&[n, co, oh, ow], out)
}

/// `y = x w^T + b`.
pub fn dense_ref(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]) -> Tensor<f64> {
    let (n, ci) = (x.shape()[0], x.shape()[1]);
    let co = w.shape()[0];
    let mut out = vec![0.0; n * co];
    for a in 0..n {
        for o in 0..co {
            out[a * co + o] = b[o] + (0..ci).map(|k| x.data()[a * ci + k] * w.data()[o * ci + k]).sum::<f64>();
        }
    }
    t(&[n, co], out)
}

/// `[n, c, h, w] -> [n, c]` spatial mean.
pub fn gap_ref(x: &Tensor<f64>) -> Tensor<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let out = (0..n * c)
        .map(|i| x.data()[i * h * w..(i + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
        .collect();
    t(&[n, c], out)
}

pub fn upsample_nearest_ref(x: &Tensor<f64>, f: usize) -> Tensor<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut out = vec![0.0; n * c * h * f * w * f];
    for p in 0..n * c {
        for y in 0..h * f {
            for xx in 0..w * f {
                out[(p * h * f + y) * w * f + xx] = x.data()[(p * h + y / f) * w + xx / f];
            }
        }
    }
    t(&[n, c, h * f, w * f], out)
}

/// `out[n, c, h*r + a, w*r + b] = x[n, c*r*r + a*r + b, h, w]`.
pub fn pixel_shuffle_ref(x: &Tensor<f64>, r: usize) -> Tensor<f64> {
    let (n, cr, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let c = cr / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![0.0; n * c * oh * ow];
    for a0 in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    for a in 0..r {
                        for b in 0..r {
                            let src = ((a0 * cr + ch * r * r + a * r + b) * h + y) * w + xx;
                            let dst = ((a0 * c + ch) * oh + y * r + a) * ow + xx * r + b;
                            out[dst] = x.data()[src];
                        }
                    }
                }
            }
        }
    }
    t(&[n, c, oh, ow], out)
}

/// Weighted BCE plus `-w2 ln J` for one flat slice, straight from the formula.
pub fn combined_loss_ref(y: &[f64], p: &[f64], w1: f64, w2: f64, eps: f64, delta: f64) -> f64 {
    let n = y.len() as f64;
    let mut bce = 0.0;
    for (&yi, &pi) in y.iter().zip(p) {
        let pc = pi.clamp(delta, 1.0 - delta);
        bce += (w1 - 1.0) * yi * pc.ln() - w1 * (1.0 - yi) * (1.0 - pc).ln();
    }
    bce /= n;
    w2 * -jaccard_ref(y, p, eps).ln() + bce
}

pub fn jaccard_ref(y: &[f64], p: &[f64], eps: f64) -> f64 {
    let inter: f64 = y.iter().zip(p).map(|(a, b)| a * b).sum();
    let sy: f64 = y.iter().sum();
    let sp: f64 = p.iter().sum();
    (inter + eps) / (sy + sp - inter + eps)
}

/// Connected-component labels by union-find, renumbered `1..` in x-fastest
/// order of each component's first voxel. Returns `(labels, sizes)`.
pub fn components_ref(fg: &[u8], dims: [usize; 3], twenty_six: bool) -> (Vec<u32>, Vec<usize>) {
    let [nx, ny, nz] = dims;
    let mut parent: Vec<usize> = (0..fg.len()).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let idx = |x: usize, y: usize, z: usize| x + nx * (y + ny * z);
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if fg[idx(x, y, z)] == 0 {
                    continue;
                }
                for dz in -1i64..=1 {
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            let m = dx.abs() + dy.abs() + dz.abs();
                            if m == 0 || (!twenty_six && m > 1) {
                                continue;
                            }
                            let (a, b, c) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                            if a < 0 || b < 0 || c < 0 || a >= nx as i64 || b >= ny as i64 || c >= nz as i64 {
                                continue;
                            }
                            let j = idx(a as usize, b as usize, c as usize);
                            if fg[j] != 0 {
                                let (ri, rj) = (find(&mut parent, idx(x, y, z)), find(&mut parent, j));
                                parent[ri.max(rj)] = ri.min(rj);
                            }
                        }
                    }
                }
            }
        }
    }
    let mut label_of_root = std::collections::HashMap::new();
    let mut labels = vec![0u32; fg.len()];
    let mut sizes = Vec::new();
    for i in 0..fg.len() {
        if fg[i] == 0 {
            continue;
        }
        let r = find(&mut parent, i);
        let next = label_of_root.len() as u32 + 1;
        let l = *label_of_root.entry(r).or_insert(next);
        if l as usize > sizes.len() {
            sizes.push(0);
        }
        sizes[l as usize - 1] += 1;
        labels[i] = l;
    }
    (labels, sizes)
}

/// Bounding box of non-zero voxels by a full scan, `(min, max)` inclusive.
pub fn bbox_ref(fg: &[u8], dims: [usize; 3]) -> Option<([usize; 3], [usize; 3])> {
    let mut bb: Option<([usize; 3], [usize; 3])> = None;
    for (i, &v) in fg.iter().enumerate() {
        if v == 0 {
            continue;
        }
        let p = [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])];
        let (lo, hi) = bb.get_or_insert((p, p));
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    bb
}

/// Evaluates `f` on a fresh tape with constant inputs and returns the value.
pub fn eval(inputs: &[Tensor<f64>], f: impl Fn(&mut Tape<f64>, &[fednet_core::Var]) -> fednet_core::Var) -> Tensor<f64> {
    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let y = f(&mut tape, &vars);
    tape.value(y).clone()
}

/// Breadth-first flood fill started from each unlabelled voxel in x-fastest
/// order, so labels come out in first-occurrence order.
pub fn flood_fill_ref(fg: &[u8], dims: [usize; 3], twenty_six: bool) -> Vec<u32> {
    let [nx, ny, nz] = dims;
    let mut labels = vec![0u32; fg.len()];
    let mut next = 0;
    let mut queue = std::collections::VecDeque::new();
    for start in 0..fg.len() {
        if fg[start] == 0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (x, y, z) = ((i % nx) as i64, ((i / nx) % ny) as i64, (i / (nx * ny)) as i64);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let m = dx.abs() + dy.abs() + dz.abs();
                        if m == 0 || (!twenty_six && m > 1) {
                            continue;
                        }
                        let (a, b, c) = (x + dx, y + dy, z + dz);
                        if a < 0 || b < 0 || c < 0 || a >= nx as i64 || b >= ny as i64 || c >= nz as i64 {
                            continue;
                        }
                        let j = a as usize + nx * (b as usize + ny * c as usize);
                        if fg[j] != 0 && labels[j] == 0 {
                            labels[j] = next;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
    }
    labels
}
