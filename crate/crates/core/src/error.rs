use std::path::PathBuf;

/// Errors produced by the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("total_antennas = {total} is not divisible by antennas_per_ap = {per_ap}")]
    IndivisibleAntennas { total: usize, per_ap: usize },

    #[error("domain error in {what}: {detail}")]
    Domain { what: &'static str, detail: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("site {site} has zero aggregate channel-estimate power; conjugate beamforming cannot normalize it")]
    DeadSite { site: usize },

    #[error("channel-estimate Gram matrix is singular (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("{singular} of {requested} channel draws were singular (limit 1%)")]
    TooManySingular { singular: usize, requested: usize },

    #[error("empty sample set")]
    EmptySamples,

    #[error("drop {index}: {source}")]
    Drop {
        index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    /// True for failures that come from the numerics rather than from the
    /// user's input (singular channel draws and friends).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Singular { .. } | Error::TooManySingular { .. } | Error::DeadSite { .. } => true,
            Error::Drop { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
