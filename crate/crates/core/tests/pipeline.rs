use fednet_core::ct::{synth_generate, SynthParams};
use fednet_core::harness::{infer_volume, Model, StagePair, TrainConfig};
use fednet_core::nn::FedNet;

/// Every weight zero and the output bias strongly negative, so the network
/// emits `sigmoid(-10)` everywhere.
fn silent_model(cfg: &TrainConfig, baseline: bool) -> Model {
    let spec = if baseline { cfg.spec.baseline() } else { cfg.spec };
    let (net, mut store) = FedNet::init::<f32>(spec, 0).unwrap();
    for p in store.iter_mut() {
        p.value.fill(0.0);
    }
    let b = store.id("head.out.b").unwrap();
    store.get_mut(b).value.fill(-10.0);
    Model { net, store }
}

#[test]
fn silent_liver_network_gives_empty_masks() {
    let cfg = TrainConfig::default();
    let (ct, _) = synth_generate(4, 1, [32, 32, 32], &SynthParams::default()).unwrap().remove(0);
    let mut lesion = silent_model(&cfg, false);
    // A lesion network that votes foreground everywhere.
    let b = lesion.store.id("head.out.b").unwrap();
    lesion.store.get_mut(b).value.fill(10.0);
    let models = StagePair { liver: silent_model(&cfg, true), lesion };
    let out = infer_volume(&models, &cfg, &ct).unwrap();
    assert_eq!(out.liver.dims(), ct.dims());
    assert_eq!(out.lesion.dims(), ct.dims());
    assert_eq!(out.liver.count_nonzero(), 0);
    assert_eq!(out.lesion.count_nonzero(), 0);
}

/// With literally all-zero parameters the output is exactly 0.5, which the
/// inclusive threshold counts as liver.
#[test]
fn all_zero_liver_network_covers_the_volume() {
    let cfg = TrainConfig::default();
    let (ct, _) = synth_generate(4, 1, [32, 32, 32], &SynthParams::default()).unwrap().remove(0);
    let zero = |baseline| {
        let mut m = silent_model(&cfg, baseline);
        let b = m.store.id("head.out.b").unwrap();
        m.store.get_mut(b).value.fill(0.0);
        m
    };
    let models = StagePair { liver: zero(true), lesion: zero(false) };
    let out = infer_volume(&models, &cfg, &ct).unwrap();
    assert_eq!(out.liver.count_nonzero(), 32 * 32 * 32);
    assert_eq!(out.lesion.count_nonzero(), 32 * 32 * 32);
}
