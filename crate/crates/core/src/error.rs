use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("tensor extents must all be >= 1, got {0:?}")]
    ZeroExtent(Vec<usize>),
    #[error("element count mismatch: shape {shape:?} holds {expected} elements, got {got}")]
    ElementCount {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("at most one extent may be inferred (-1)")]
    MultipleInferMarkers,
    #[error("invalid extent {0} in reshape target")]
    InvalidReshapeExtent(isize),
    #[error("axes {0:?} are not a permutation of the tensor's axes")]
    NotAPermutation(Vec<usize>),
    #[error("{op}: expected a rank-{expected} tensor, got rank {got}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected} channels, got {got}")]
    ChannelMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("groups {groups} must divide in_channels {in_channels} and out_channels {out_channels}")]
    InvalidGroups {
        groups: usize,
        in_channels: usize,
        out_channels: usize,
    },
    #[error("convolution produces a non-positive output extent for input {input:?}")]
    EmptyOutput { input: Vec<usize> },
    #[error("{op}: parameter vector has length {got}, expected {expected}")]
    ParamLength {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("block partition needs even height and width, got {height}x{width}")]
    OddSpatial { height: usize, width: usize },
    #[error("block batch extent {batch} is not 4 x {images}")]
    BlockBatch { batch: usize, images: usize },
    #[error("at least one branch must be enabled")]
    NoBranches,
    #[error("expected {expected} branch outputs, got {got}")]
    BranchCount { expected: usize, got: usize },
    #[error("tape has no output node")]
    NoOutput,
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("input lies within {margin:e} of a max-pool tie")]
    TieBoundary { margin: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}
