use std::fmt;

use thiserror::Error;

/// Spatio-temporal axis of a tube or clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    T,
    H,
    W,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::T, Axis::H, Axis::W];

    pub fn index(self) -> usize {
        match self {
            Axis::T => 0,
            Axis::H => 1,
            Axis::W => 2,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::T => "t",
            Axis::H => "h",
            Axis::W => "w",
        };
        f.write_str(s)
    }
}

/// Problems with tube geometry. Cloneable so validation reports can carry them.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("tube bank has no tubes")]
    EmptyBank,
    #[error("tube bank has no image-applicable tube")]
    NoImageTube,
    #[error("tube {tube}: {reason}")]
    InvalidTube { tube: usize, reason: String },
    #[error("tube {tube} yields no window along axis {axis} (offset + kernel exceeds input)")]
    EmptyGrid { tube: usize, axis: Axis },
    #[error("tube {tube}: space-to-depth factor {factor} does not divide hidden size {hidden}")]
    BadGrouping {
        tube: usize,
        factor: usize,
        hidden: usize,
    },
    #[error(
        "tube {tube}: stride {stride} along {axis} is not divisible by grouping factor {group}"
    )]
    StrideNotDivisible {
        tube: usize,
        axis: Axis,
        stride: usize,
        group: usize,
    },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("grid of {counts:?} tokens is not divisible by group {group:?}")]
    GridNotDivisible {
        counts: [usize; 3],
        group: [usize; 3],
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("backward called without a training-mode forward trace")]
    MissingTrace,
    #[error("unknown classification head {0:?}")]
    UnknownHead(String),
    #[error("small width {small} does not divide large width {large}")]
    IncompatibleWidths { small: usize, large: usize },
    #[error("corrupt checkpoint: {0}")]
    CorruptManifest(String),
    #[error("bad clip file: {0}")]
    BadClipFile(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
