//! Crate-wide error type.

use core::fmt;

/// Errors reported by model evaluation, detection, fitting, and optimization.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A point lies on (or numerically at) a thin-lens focal plane, so its
    /// image is at infinity.
    SingularConfiguration,
    /// A point projects behind the main lens where the model is undefined.
    BehindLens,
    /// A homogeneous weight fell below the dehomogenization threshold.
    Dehomogenization,
    /// A requested micro-lens index is outside the array extent.
    LensIndexOutOfBounds { k: i32, l: i32 },
    /// The raster is too small to hold the requested content.
    RasterTooSmall,
    /// Fewer centers were detected than the minimum needed downstream.
    DetectionFailed { found: usize, needed: usize },
    /// An iterative fit did not converge within its iteration budget.
    NonConvergence { iterations: usize },
    /// Lattice index assignment remained ambiguous.
    AmbiguousAssignment,
    /// The second-moment matrix of a spot is numerically rank deficient.
    DegenerateMoments,
    /// A regression design matrix is rank deficient (e.g. all f-numbers equal).
    RankDeficient,
    /// All member pairs of a cluster are singular for depth estimation.
    SingularDepth,
    /// Not enough observations for the requested operation.
    InsufficientData { found: usize, needed: usize },
    /// A pose estimation input set is geometrically degenerate.
    DegenerateConfiguration,
    /// Initialization discriminant is negative (focus distance too short).
    NegativeDiscriminant,
    /// Derived geometry is invalid (non-positive distance).
    InvalidGeometry,
    /// Mismatched raster dimensions.
    DimensionMismatch,
    /// An input set that must be non-empty was empty.
    EmptyInput,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::SingularConfiguration => write!(f, "point on a focal plane has no finite image"),
            Error::BehindLens => write!(f, "point projects behind the main lens"),
            Error::Dehomogenization => write!(f, "homogeneous weight below threshold"),
            Error::LensIndexOutOfBounds { k, l } => {
                write!(f, "micro-lens index ({k}, {l}) outside array extent")
            }
            Error::RasterTooSmall => write!(f, "raster too small for the requested content"),
            Error::DetectionFailed { found, needed } => {
                write!(f, "detected {found} centers, need at least {needed}")
            }
            Error::NonConvergence { iterations } => {
                write!(f, "no convergence after {iterations} iterations")
            }
            Error::AmbiguousAssignment => write!(f, "ambiguous lattice index assignment"),
            Error::DegenerateMoments => write!(f, "second-moment matrix is rank deficient"),
            Error::RankDeficient => write!(f, "regression design matrix is rank deficient"),
            Error::SingularDepth => write!(f, "all pairs singular for depth estimation"),
            Error::InsufficientData { found, needed } => {
                write!(f, "got {found} observations, need at least {needed}")
            }
            Error::DegenerateConfiguration => write!(f, "degenerate point configuration"),
            Error::NegativeDiscriminant => {
                write!(f, "negative discriminant: focus distance shorter than 4F")
            }
            Error::InvalidGeometry => write!(f, "derived geometry has a non-positive distance"),
            Error::DimensionMismatch => write!(f, "raster dimensions do not match"),
            Error::EmptyInput => write!(f, "input set is empty"),
        }
    }
}

impl core::error::Error for Error {}
