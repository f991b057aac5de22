//! Error types shared across the core library.

use thiserror::Error;

/// Unified error type for core operations.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("dimension mismatch: {context} (left {left_rows}x{left_cols}, right {right_rows}x{right_cols})")]
    DimMismatch {
        context: &'static str,
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max |a_ij - a_ji| = {max_asym:e} exceeds tolerance {tol:e})")]
    NotSymmetric { max_asym: f64, tol: f64 },

    #[error("matrix is singular or numerically rank-deficient (pivot {pivot:e} at column {col})")]
    Singular { pivot: f64, col: usize },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("non-finite gradient in layer {layer} tensor {tensor}; aborting optimizer step")]
    NonFiniteGradient { layer: usize, tensor: &'static str },

    #[error("iteration did not converge within {iters} iterations ({context})")]
    NoConverge { context: &'static str, iters: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("starting point lies outside the basin: distance {dist:e} >= radius {radius:e}")]
    OutsideBasin { dist: f64, radius: f64 },

    #[error("idx file: bad magic (expected {expected:#010x}, found {found:#010x})")]
    IdxBadMagic { expected: u32, found: u32 },

    #[error("idx file: truncated (needed {needed} bytes, found {found})")]
    IdxTruncated { needed: usize, found: usize },

    #[error("idx file: {extra} trailing bytes after declared payload")]
    IdxTrailingBytes { extra: usize },

    #[error("idx file: dimension product overflows ({context})")]
    IdxDimOverflow { context: &'static str },

    #[error("idx pair: image count {images} does not match label count {labels}")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("checkpoint: bad magic")]
    CheckpointBadMagic,

    #[error("checkpoint: unsupported version {0}")]
    CheckpointBadVersion(u32),

    #[error("checkpoint: truncated or corrupt ({0})")]
    CheckpointCorrupt(String),

    #[error("checkpoint: checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    CheckpointChecksum { stored: u32, computed: u32 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the core crate.
pub type Result<T> = std::result::Result<T, CoreError>;
