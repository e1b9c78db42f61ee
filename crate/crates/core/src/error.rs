// SPDX-License-Identifier: MIT OR Apache-2.0

//! Error type shared by every module of the crate.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceLength { len: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("target position {target} is not causally downstream of probe position {probe}")]
    Causality { target: usize, probe: usize },

    #[error("invalid probe: {0}")]
    Probe(String),

    #[error("training failed at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error("base-fact recall {recall:.4} is below the required {threshold:.4}")]
    TrainingShortfall { recall: f64, threshold: f64 },

    #[error("checkpoint format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("checkpoint version {found} is not supported (this build reads version {expected})")]
    Version { found: u32, expected: u32 },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("arity: {0}")]
    Arity(String),

    #[error("incompatible checkpoints: {0}")]
    Compatibility(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
