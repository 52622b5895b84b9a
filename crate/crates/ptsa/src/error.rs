use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] ptsa_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}:{line}: {source}", path.display())]
    StoreLine { path: PathBuf, line: usize, source: serde_json::Error },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("inconsistent sample store: {0}")]
    Store(String),
    #[error("invalid campaign: {0}")]
    Spec(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
        let path = path.into();
        move |source| Error::Json { path, source }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>) -> impl FnOnce(csv::Error) -> Error {
        let path = path.into();
        move |source| Error::Csv { path, source }
    }

    /// Stable machine-readable name of the failure.
    pub fn kind(&self) -> &'static str {
        use ptsa_core::Error as C;
        match self {
            Error::Core(e) => match e {
                C::InvalidCase(_) => "invalid_case",
                C::IslandedNetwork => "islanded_network",
                C::DegenerateNetwork => "degenerate_network",
                C::PowerFlowDiverged { .. } => "power_flow_diverged",
                C::InvalidModel(_) => "invalid_model",
                C::OutsideSupport { .. } => "outside_support",
                C::InvalidConfig(_) => "invalid_config",
                C::MaxLevelsExceeded { .. } => "max_levels_exceeded",
                C::EmptyStratum { .. } => "empty_stratum",
                C::NoFailureSamples => "no_failure_samples",
                C::NonGaussianTarget { .. } => "non_gaussian_target",
            },
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::StoreLine { .. } => "store_line",
            Error::Csv { .. } => "csv",
            Error::Store(_) => "inconsistent_store",
            Error::Spec(_) => "invalid_campaign",
        }
    }

    /// Whether partial artifacts were written before the failure.
    pub fn is_partial(&self) -> bool {
        matches!(self, Error::Core(ptsa_core::Error::MaxLevelsExceeded { .. }))
    }
}
