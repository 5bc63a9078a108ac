use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NonSymmetric { asymmetry: f64 },
    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e} below tolerance)")]
    NotPsd { eigenvalue: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("Euler step clipped {clipped:e} of eigenvalue mass {mass:e} at step {step}; grid too coarse")]
    DegenerateStep {
        step: usize,
        clipped: f64,
        mass: f64,
    },
    #[error("mode count {modes} exceeds the number of increments {increments}")]
    ModeCountTooLarge { modes: usize, increments: usize },
    #[error("reconstruction has imaginary residue {residue:e} at time {time}")]
    ImaginaryResidue { time: f64, residue: f64 },
    #[error("value {value} at entry ({row},{col}) outside the invertible domain")]
    OutOfDomain { row: usize, col: usize, value: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid rate: gamma must satisfy gamma > 1 and K > 0 (got gamma = {gamma}, K = {k})")]
    InvalidRate { gamma: f64, k: f64 },
    #[error(
        "block count {blocks} leaves fewer than one increment per block ({increments} increments)"
    )]
    BlockTooSmall { blocks: usize, increments: usize },
    #[error("need at least 3 evaluation points for shrinkage, got {0}")]
    TooFewPoints(usize),
    #[error("coarse grid not embeddable in the observation grid: {0}")]
    GridMismatch(String),
    #[error("series did not converge after {terms} terms")]
    NoConvergence { terms: usize },
    #[error("degenerate alpha: diagonal entry {index} is {value}")]
    DegenerateAlpha { index: usize, value: f64 },
    #[error("empty path")]
    EmptyPath,
    #[error("negative diagonal {value} at coarse point {point}, component {component}")]
    NegativeDiagonal {
        point: usize,
        component: usize,
        value: f64,
    },
    #[error("solver failure: {0}")]
    SolverFailure(String),
    #[error("observations are not equidistant at row {row}")]
    NotEquidistant { row: usize },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("empty observation file")]
    EmptyFile,
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable identifier used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NonSymmetric { .. } => "NonSymmetric",
            Error::NotPsd { .. } => "NotPSD",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::InvalidParams(_) => "InvalidParams",
            Error::DegenerateStep { .. } => "DegenerateStep",
            Error::ModeCountTooLarge { .. } => "ModeCountTooLarge",
            Error::ImaginaryResidue { .. } => "ImaginaryResidue",
            Error::OutOfDomain { .. } => "OutOfDomain",
            Error::Unsupported(_) => "Unsupported",
            Error::InvalidRate { .. } => "InvalidRate",
            Error::BlockTooSmall { .. } => "BlockTooSmall",
            Error::TooFewPoints(_) => "TooFewPoints",
            Error::GridMismatch(_) => "GridMismatch",
            Error::NoConvergence { .. } => "NoConvergence",
            Error::DegenerateAlpha { .. } => "DegenerateAlpha",
            Error::EmptyPath => "EmptyPath",
            Error::NegativeDiagonal { .. } => "NegativeDiagonal",
            Error::SolverFailure(_) => "SolverFailure",
            Error::NotEquidistant { .. } => "NotEquidistant",
            Error::NonFinite { .. } => "NonFinite",
            Error::EmptyFile => "EmptyFile",
            Error::Malformed(_) => "Malformed",
            Error::Config(_) => "Config",
            Error::Io(_) => "Io",
        }
    }

    /// Whether the error stems from invalid user input rather than a numerical failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::NonSymmetric { .. }
                | Error::DimensionMismatch(_)
                | Error::InvalidParams(_)
                | Error::ModeCountTooLarge { .. }
                | Error::Unsupported(_)
                | Error::InvalidRate { .. }
                | Error::BlockTooSmall { .. }
                | Error::TooFewPoints(_)
                | Error::GridMismatch(_)
                | Error::EmptyPath
                | Error::NotEquidistant { .. }
                | Error::NonFinite { .. }
                | Error::EmptyFile
                | Error::Malformed(_)
                | Error::Config(_)
                | Error::Io(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Malformed(e.to_string())
    }
}
