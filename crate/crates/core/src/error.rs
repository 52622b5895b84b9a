use alloc::boxed::Box;
use alloc::string::String;

use crate::rare_event::SubSimResult;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("invalid grid case: {0}")]
    InvalidCase(String),

    #[error("islanded network")]
    IslandedNetwork,

    #[error("degenerate network")]
    DegenerateNetwork,

    #[error("power flow did not converge after {iterations} iterations (max mismatch {mismatch:e} pu)")]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    #[error("invalid input model: {0}")]
    InvalidModel(String),

    #[error("input {index} value {value} outside support")]
    OutsideSupport { index: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The failure probability lies below what `max_levels` can resolve.
    /// Carries everything computed up to the cap.
    #[error("maximum number of subset levels ({max_levels}) exceeded")]
    MaxLevelsExceeded {
        max_levels: usize,
        partial: Box<SubSimResult>,
    },

    #[error("empty stratum: bin {bin} has positive probability but no samples")]
    EmptyStratum { bin: usize },

    #[error("no failure samples in the retained set")]
    NoFailureSamples,

    #[error("clamp rule defined for Gaussian marginals only (input {index})")]
    NonGaussianTarget { index: usize },
}
