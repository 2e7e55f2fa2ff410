use alloc::string::String;

use crate::tensor::Shape;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape {0}: every extent must be at least 1")]
    InvalidShape(Shape),
    #[error("data length {len} does not match shape {shape}")]
    DataLength { shape: Shape, len: usize },
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: Shape, found: Shape },
    #[error("tensor contains a non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("invalid kernel extent {height}x{width}: both extents must be odd")]
    InvalidKernel { height: usize, width: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    InvalidLabel { label: usize, num_classes: usize },
    #[error("layer {layer} ({kind}): {detail}")]
    Layer {
        layer: usize,
        kind: &'static str,
        detail: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{members} ensemble members but {weights} weights")]
    WeightCount { members: usize, weights: usize },
    #[error("cannot score an empty outcome list")]
    NoOutcomes,
    #[error("protocol violation: black-box model `{model}` is part of the attack ensemble")]
    ProtocolViolation { model: String },
}
