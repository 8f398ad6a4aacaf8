//! MIMO-OFDM channel estimation benchmark.
//!
//! The pieces, bottom up: resource-grid and pilot bookkeeping ([`grid`]), a
//! tapped-delay-line channel simulator ([`channel`]), per-pilot LS plus the
//! LI/DFTI/DFTLI interpolators ([`classical`]), the 2DU/3DFF CNN estimators
//! ([`estimators`]), QPSK and ML/ZF/V-BLAST detection ([`detect`]), and
//! datasets, NMSE and sweep orchestration ([`bench`]).

pub mod bench;
pub mod channel;
pub mod classical;
pub mod detect;
pub mod estimators;
pub mod grid;
mod seed;

pub use num_complex::Complex64;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    Dims(String),
    #[error("invalid pilot pattern: {0}")]
    Pattern(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("rank-deficient channel matrix (condition {0:.3e})")]
    RankDeficient(f64),
    #[error("dataset format: {0}")]
    Format(String),
    #[error("config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged {
        epoch: usize,
        batch: usize,
        detail: String,
        /// Parameters from the last batch that finished with a finite loss.
        last_good: Box<cebench_nn::Model<f32>>,
    },
    #[error(transparent)]
    Nn(#[from] cebench_nn::NnError),
    #[error("{path}: {source}")]
    File {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dims(_) => "dims",
            Error::Pattern(_) => "pattern",
            Error::Shape(_) => "shape",
            Error::Invalid(_) => "invalid",
            Error::Estimation(_) => "estimation",
            Error::RankDeficient(_) => "rank",
            Error::Format(_) => "format",
            Error::Config(_) => "config",
            Error::Diverged { .. } => "diverged",
            Error::Nn(_) => "nn",
            Error::File { .. } => "file",
            Error::Io(_) => "io",
        }
    }
}

/// Attaches a path to I/O failures.
pub(crate) fn file_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File {
        path: path.to_path_buf(),
        source,
    }
}
