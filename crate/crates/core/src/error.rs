//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions, unknown names, malformed config values.
    #[error("configuration error: {0}")]
    Config(String),

    /// A drift, dispersion or weight evaluation produced a non-finite value.
    #[error("numeric failure at t = {time}: {what}")]
    Numeric { time: f64, what: String },

    /// A guided kernel could not be assembled (covariance block not positive definite).
    #[error("kernel build failed at t = {time}: {what}")]
    KernelBuild { time: f64, what: String },

    /// Argument outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A guided proposal left the finite range. Samplers treat this as a rejection.
    #[error("proposal failure at t = {time}")]
    ProposalFailure { time: f64 },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {}: {what}", path.display())]
    Parse { path: PathBuf, what: String },

    /// A fatal failure inside a chain, with the sweep and block it happened in.
    #[error("sweep {sweep}, {block}: {source}")]
    Chain {
        sweep: usize,
        block: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn numeric(time: f64, what: impl Into<String>) -> Self {
        Error::Numeric {
            time,
            what: what.into(),
        }
    }

    pub(crate) fn kernel(time: f64, what: impl Into<String>) -> Self {
        Error::KernelBuild {
            time,
            what: what.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_chain(self, sweep: usize, block: impl Into<String>) -> Self {
        match self {
            e @ Error::Chain { .. } => e,
            e => Error::Chain {
                sweep,
                block: block.into(),
                source: Box::new(e),
            },
        }
    }

    /// Failures of a proposed move that a Metropolis–Hastings step treats as rejection.
    pub fn rejects_proposal(&self) -> bool {
        matches!(
            self,
            Error::ProposalFailure { .. } | Error::Numeric { .. } | Error::KernelBuild { .. }
        )
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io { .. } | Error::Parse { .. } => 2,
            Error::Chain { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}
