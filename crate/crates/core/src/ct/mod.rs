//! CT volume handling around the network: I/O, preprocessing, sampling,
//! post-processing and synthetic phantoms.

pub mod mvol;
pub mod postprocess;
pub mod preprocess;
pub mod synth;
pub mod volume;

pub use mvol::{read_mvol, read_mvol_as, write_mvol, AnyVolume};
pub use postprocess::{
    bbox_of_mask, connected_components_3d, hierarchical_postprocess, largest_component, threshold_mask, Bbox3,
    Components, Connectivity, PostprocessParams, Postprocessed,
};
pub use preprocess::{
    flip_augment, hu_window_normalize, sample_slices, stack_adjacent_slices, SamplingParams, SliceSample,
};
pub use synth::{synth_generate, SynthParams};
pub use volume::{CtVolume, Dtype, MaskVolume, ProbVolume, Volume, Voxel};
