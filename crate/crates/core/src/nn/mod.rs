//! Network components and the assembled encoder-decoder models.

pub mod blocks;
pub mod encoder;
pub mod fusion;
pub mod layers;
pub mod network;

pub use blocks::{DecoderBlock, Duc, Rcb, SeBlock, Upsampler};
pub use encoder::{Encoder, ENCODER_STRIDE};
pub use fusion::{FeatureFusion, FeaturePyramid, FusionOutput};
pub use network::{baseline_forward, FedNet, NetworkSpec};
