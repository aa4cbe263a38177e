mod common;

use common::*;
use fednet_core::ct::{
    bbox_of_mask, connected_components_3d, hierarchical_postprocess, largest_component, threshold_mask, Connectivity,
    MaskVolume, PostprocessParams, ProbVolume, Volume,
};
use fednet_core::metrics::{dice_global, dice_per_case};
use fednet_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_t(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, r)
}

fn vec_of(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
}

#[test]
fn conv2d_matches_nested_loops() {
    let mut r = rng(1);
    for (xs, ws, stride, pad) in [
        ([2, 3, 7, 6], [4, 3, 3, 3], 1, 1),
        ([1, 2, 8, 8], [3, 2, 3, 3], 2, 1),
        ([1, 5, 5, 4], [2, 5, 1, 1], 1, 0),
        ([3, 1, 9, 7], [2, 1, 2, 2], 2, 0),
    ] {
        let (x, w, b) = (rand_t(&xs, &mut r), rand_t(&ws, &mut r), vec_of(ws[0], &mut r));
        let bt = t(&[ws[0]], b.clone());
        let got = eval(&[x.clone(), w.clone(), bt], |tp, v| tp.conv2d(v[0], v[1], v[2], stride, pad).unwrap());
        let want = conv2d_ref(&x, &w, &b, stride, pad);
        assert_eq!(got.shape(), want.shape());
        assert!(got.max_abs_diff(&want) <= 1e-12, "{xs:?}: {}", got.max_abs_diff(&want));
    }
}

#[test]
fn conv_transpose2d_matches_scatter_reference() {
    let mut r = rng(2);
    for (xs, ws, stride, pad) in [
        ([1, 3, 4, 5], [3, 2, 2, 2], 2, 0),
        ([2, 2, 3, 3], [2, 4, 3, 3], 1, 1),
        ([1, 4, 4, 4], [4, 1, 4, 4], 4, 0),
        ([1, 2, 5, 3], [2, 3, 3, 3], 2, 1),
    ] {
        let (x, w, b) = (rand_t(&xs, &mut r), rand_t(&ws, &mut r), vec_of(ws[1], &mut r));
        let bt = t(&[ws[1]], b.clone());
        let got = eval(&[x.clone(), w.clone(), bt], |tp, v| {
            tp.conv_transpose2d(v[0], v[1], v[2], stride, pad).unwrap()
        });
        let want = conv_transpose2d_ref(&x, &w, &b, stride, pad);
        assert_eq!(got.shape(), want.shape());
        assert!(got.max_abs_diff(&want) <= 1e-12);
    }
}

#[test]
fn dense_and_pooling_match_reference() {
    let mut r = rng(3);
    let (x, w, b) = (rand_t(&[5, 7], &mut r), rand_t(&[3, 7], &mut r), vec_of(3, &mut r));
    let got = eval(&[x.clone(), w.clone(), t(&[3], b.clone())], |tp, v| tp.dense(v[0], v[1], v[2]).unwrap());
    assert!(got.max_abs_diff(&dense_ref(&x, &w, &b)) <= 1e-12);

    let x = rand_t(&[2, 3, 5, 4], &mut r);
    let got = eval(std::slice::from_ref(&x), |tp, v| tp.global_avg_pool(v[0]).unwrap());
    let want = gap_ref(&x);
    assert_eq!(got.numel(), want.numel());
    let diff = got.data().iter().zip(want.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-12);
}

#[test]
fn nearest_upsampling_and_pixel_shuffle_are_exact() {
    let mut r = rng(4);
    let x = rand_t(&[2, 3, 3, 5], &mut r);
    for f in [1, 2, 4] {
        let got = eval(std::slice::from_ref(&x), |tp, v| tp.upsample_nearest(v[0], f).unwrap());
        assert_eq!(got, upsample_nearest_ref(&x, f));
    }
    let x = rand_t(&[2, 8, 3, 2], &mut r);
    let got = eval(std::slice::from_ref(&x), |tp, v| tp.pixel_shuffle(v[0], 2).unwrap());
    assert_eq!(got, pixel_shuffle_ref(&x, 2));
    let back = eval(&[got], |tp, v| tp.pixel_unshuffle(v[0], 2).unwrap());
    assert_eq!(back, x);
}

#[test]
fn sigmoid_and_channel_scale_match_closed_form() {
    let mut r = rng(5);
    let x = Tensor::uniform(&[1, 2, 3, 3], -30.0, 30.0, &mut r);
    let got = eval(std::slice::from_ref(&x), |tp, v| tp.sigmoid(v[0]));
    for (&g, &xi) in got.data().iter().zip(x.data()) {
        let want = 1.0 / (1.0 + (-xi).exp());
        assert!((g - want).abs() <= 1e-15 * want, "sigmoid({xi}) = {g}, want {want}");
        assert!(g > 0.0 && g < 1.0);
    }

    let x = rand_t(&[2, 3, 2, 2], &mut r);
    let s = rand_t(&[2, 3], &mut r);
    let got = eval(&[x.clone(), s.clone()], |tp, v| tp.channel_scale(v[0], v[1]).unwrap());
    for (i, &g) in got.data().iter().enumerate() {
        assert_eq!(g, x.data()[i] * s.data()[i / 4]);
    }
}

fn random_mask(r: &mut ChaCha8Rng, dims: [usize; 3], density: f64) -> MaskVolume {
    let n = dims.iter().product();
    let v = (0..n).map(|_| u8::from(r.gen_bool(density))).collect();
    Volume::new(dims, [1.0; 3], v).unwrap()
}

#[test]
fn connected_components_match_union_find_on_100_volumes() {
    let mut r = rng(6);
    for i in 0..100 {
        let density = [0.2, 0.3, 0.45][i % 3];
        let m = random_mask(&mut r, [16, 16, 16], density);
        for (conn, is26) in [(Connectivity::Six, false), (Connectivity::TwentySix, true)] {
            let cc = connected_components_3d(&m, conn);
            let (labels, sizes) = components_ref(m.voxels(), m.dims(), is26);
            assert_eq!(cc.labels, labels, "volume {i}, {conn:?}");
            assert_eq!(cc.sizes, sizes, "volume {i}, {conn:?}");
        }
    }
}

#[test]
fn largest_component_keeps_the_biggest_label() {
    let mut r = rng(7);
    for _ in 0..20 {
        let m = random_mask(&mut r, [12, 10, 8], 0.3);
        let (labels, sizes) = components_ref(m.voxels(), m.dims(), false);
        let keep = largest_component(&m, Connectivity::Six);
        if sizes.is_empty() {
            assert_eq!(keep.count_nonzero(), 0);
            continue;
        }
        let max = *sizes.iter().max().unwrap();
        let best = sizes.iter().position(|&s| s == max).unwrap() as u32 + 1;
        let want: Vec<u8> = labels.iter().map(|&l| u8::from(l == best)).collect();
        assert_eq!(keep.voxels(), &want[..]);
    }
}

#[test]
fn bbox_matches_full_scan() {
    let mut r = rng(8);
    for i in 0..50 {
        let m = random_mask(&mut r, [9, 7, 11], [0.0, 0.002, 0.05][i % 3]);
        match (bbox_of_mask(&m), bbox_ref(m.voxels(), m.dims())) {
            (Ok(b), Some((lo, hi))) => assert_eq!((b.min, b.max), (lo, hi)),
            (Err(_), None) => {}
            (got, want) => panic!("bbox {got:?} vs scan {want:?}"),
        }
    }
}

/// The composed post-processing rebuilt from the reference pieces.
#[test]
fn hierarchical_postprocess_matches_composed_reference() {
    let mut r = rng(9);
    let dims = [10, 9, 8];
    let n: usize = dims.iter().product();
    for _ in 0..30 {
        let liver: ProbVolume = Volume::new(dims, [1.0; 3], (0..n).map(|_| r.gen::<f32>()).collect()).unwrap();
        let lesion: ProbVolume = Volume::new(dims, [1.0; 3], (0..n).map(|_| r.gen::<f32>()).collect()).unwrap();
        let params = PostprocessParams {
            liver_threshold: r.gen_range(0.5..0.8),
            lesion_threshold: 0.3,
            connectivity: Connectivity::Six,
        };
        let got = hierarchical_postprocess(&liver, &lesion, &params).unwrap();

        let fg: Vec<u8> = liver.voxels().iter().map(|&p| u8::from(p >= params.liver_threshold)).collect();
        let (labels, sizes) = components_ref(&fg, dims, false);
        let want_liver: Vec<u8> = match sizes.iter().max() {
            Some(&max) => {
                let best = sizes.iter().position(|&s| s == max).unwrap() as u32 + 1;
                labels.iter().map(|&l| u8::from(l == best)).collect()
            }
            None => vec![0; n],
        };
        assert_eq!(got.liver.voxels(), &want_liver[..]);
        let bb = bbox_ref(&want_liver, dims);
        for (i, &p) in lesion.voxels().iter().enumerate() {
            let q = [i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1])];
            let inside = bb.is_some_and(|(lo, hi)| (0..3).all(|a| lo[a] <= q[a] && q[a] <= hi[a]));
            assert_eq!(got.lesion.voxels()[i], u8::from(inside && p >= 0.3), "voxel {i}");
        }
    }
}

#[test]
fn threshold_is_inclusive() {
    let p: ProbVolume = Volume::new([3, 1, 1], [1.0; 3], vec![0.29999, 0.3, 0.9]).unwrap();
    assert_eq!(threshold_mask(&p, 0.3).voxels(), &[0, 1, 1]);
}

#[test]
fn dice_reports_match_recount() {
    let mut r = rng(10);
    let cases: Vec<(Vec<u8>, Vec<u8>)> = (0..6)
        .map(|i| {
            let n = 50 + 10 * i;
            let d = [0.0, 0.1, 0.4][i % 3];
            let a = (0..n).map(|_| u8::from(r.gen_bool(d))).collect();
            let b = (0..n).map(|_| u8::from(r.gen_bool(0.2))).collect();
            (a, b)
        })
        .collect();
    let mut per_case = 0.0;
    let (mut inter, mut total) = (0usize, 0usize);
    for (a, b) in &cases {
        let i = a.iter().zip(b).filter(|(x, y)| **x != 0 && **y != 0).count();
        let s = a.iter().filter(|&&x| x != 0).count() + b.iter().filter(|&&x| x != 0).count();
        per_case += if s == 0 { 1.0 } else { 2.0 * i as f64 / s as f64 };
        inter += i;
        total += s;
    }
    per_case /= cases.len() as f64;
    assert!((dice_per_case(&cases).unwrap() - per_case).abs() <= 1e-15);
    assert!((dice_global(&cases).unwrap() - 2.0 * inter as f64 / total as f64).abs() <= 1e-15);
}
