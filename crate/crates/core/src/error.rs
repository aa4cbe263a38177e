use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("{op}: {axis} mismatch (expected {expected}, found {found})")]
    ShapeMismatch {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{op}: {axis} extent {extent} is not divisible by {divisor}")]
    Indivisible {
        op: &'static str,
        axis: &'static str,
        extent: usize,
        divisor: usize,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GradError {
    #[error("backward root must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("backward root does not depend on any value that requires a gradient")]
    Detached,

    #[error("this tape has already been differentiated")]
    AlreadyBackpropagated,
}

#[derive(Debug, Error)]
pub enum MvolError {
    #[error("bad magic bytes (not an MVOL1 file)")]
    BadMagic,

    #[error("truncated file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("volume dimensions {0:?} overflow the addressable size")]
    DimOverflow([u32; 3]),

    #[error("zero-sized dimension in {0:?}")]
    EmptyDims([u32; 3]),

    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),

    #[error("{0} unexpected trailing bytes")]
    TrailingBytes(u64),

    #[error("expected a {expected} volume, found {found}")]
    WrongDtype {
        expected: &'static str,
        found: &'static str,
    },

    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes (not a FEDCKPT1 checkpoint)")]
    BadMagic,

    #[error("truncated checkpoint")]
    Truncated,

    #[error("parameter name is not valid UTF-8")]
    BadName,

    #[error("checkpoint is missing parameter `{0}`")]
    Missing(String),

    #[error("checkpoint has unexpected parameter `{0}`")]
    Unexpected(String),

    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("duplicate parameter name `{0}`")]
    Duplicate(String),

    #[error("name `{0}` is longer than 65535 bytes")]
    NameTooLong(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error("volume dimensions differ: {a:?} vs {b:?}")]
    DimMismatch { a: [usize; 3], b: [usize; 3] },

    #[error("mask is empty")]
    EmptyMask,

    #[error("slice index {z} out of range for depth {nz}")]
    SliceOutOfRange { z: usize, nz: usize },

    #[error("voxel count {len} does not match dimensions {dims:?}")]
    VoxelCount { dims: [usize; 3], len: usize },

    #[error("volume dimensions {dims:?} are too small (each axis must be at least {min})")]
    TooSmall { dims: [usize; 3], min: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    #[error("line {line}: cannot parse `{value}` for `{key}`: {reason}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
        reason: String,
    },

    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },

    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },

    #[error("{key}: {reason}{}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Invalid {
        key: &'static str,
        reason: String,
        line: Option<usize>,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("mask shapes differ: {a} vs {b} voxels")]
    ShapeMismatch { a: usize, b: usize },

    #[error("no cases to evaluate")]
    NoCases,

    #[error("{0}")]
    InvalidPair(String),

    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
}

/// Top-level error for pipeline and harness operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Grad(#[from] GradError),

    #[error(transparent)]
    Mvol(#[from] MvolError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Volume(#[from] VolumeError),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Metric(#[from] MetricError),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("no training data found in {0}")]
    NoData(PathBuf),

    #[error("unpaired file {0}")]
    Unpaired(PathBuf),

    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),

    #[error("invalid network spec: {0}")]
    Spec(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn at_path(self, path: impl Into<PathBuf>) -> Self {
        Error::File {
            path: path.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input rather than internal failure.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Config(_) | Error::Spec(_) | Error::Unpaired(_) | Error::NoData(_) => true,
            Error::Checkpoint(e) => !matches!(e, CheckpointError::Io(_)),
            Error::Mvol(e) => !matches!(e, MvolError::Io(_)),
            Error::Volume(_) | Error::Metric(_) => true,
            Error::File { source, .. } => source.is_validation(),
            Error::Io(e) => e.kind() == io::ErrorKind::NotFound,
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
