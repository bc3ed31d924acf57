use std::path::PathBuf;

use crate::gamp::GampState;

/// Errors produced anywhere in the simulator.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid room: {0}")]
    InvalidRoom(String),

    #[error("voxel index {index} out of range (room has {count} voxels)")]
    VoxelIndex { index: usize, count: usize },

    #[error("sparsity {0} outside (0, 1]")]
    Sparsity(f64),

    #[error("scattering coefficient {value} at voxel {index} outside [0, 1]")]
    Scatterer { index: usize, value: f64 },

    #[error("{what}, line {line}: {msg}")]
    Parse {
        what: &'static str,
        line: usize,
        msg: String,
    },

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("degenerate {link} link: distance {distance:.4} m below minimum {min:.4} m")]
    DegenerateLink {
        link: &'static str,
        distance: f64,
        min: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid codebook: {0}")]
    Codebook(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("joint search over {bits} bits exceeds the enumeration limit of {limit}")]
    EnumerationTooLarge { bits: u32, limit: u32 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("GAMP diverged at iteration {iteration} (residual {residual:.3e}, initial {initial:.3e})")]
    Diverged {
        iteration: usize,
        residual: f64,
        initial: f64,
        state: Box<GampState>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(what: &'static str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            what,
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Diverged { .. } | Error::Io(_) | Error::Csv(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
