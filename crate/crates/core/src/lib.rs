//! FED-Net: a feature-fusion encoder-decoder network for liver lesion
//! segmentation in CT, built on a small self-contained tensor and
//! reverse-mode differentiation core.

pub mod checkpoint;
pub mod ct;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod param;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use param::{ParamId, ParamStore, Parameter, SgdConfig, WeightInit};
pub use tape::{OpKind, Tape, Var};
pub use tensor::{Real, Tensor};
