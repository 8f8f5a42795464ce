use std::io;

use thiserror::Error;

use crate::nn::train::EpochLoss;
use crate::solver::Residuals;

/// Errors produced by the pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("distortion sampling gave up after {attempts} attempts (seed {seed})")]
    SamplingExhausted { seed: u64, attempts: usize },

    #[error("solver did not converge in {iterations} iterations (final residual {final_residual:.3e})")]
    NotConverged {
        iterations: usize,
        final_residual: f64,
        history: Vec<Residuals>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("missing standardization statistics for {0}")]
    MissingStats(String),

    #[error("unknown transform code {0}")]
    UnknownTransform(u8),

    #[error("record {id}: {reason}")]
    Record { id: usize, reason: String },

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, history: Vec<EpochLoss> },

    #[error("generation failure rate too high: {failures} failures for {successes} successes")]
    FailureRate { failures: usize, successes: usize },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

