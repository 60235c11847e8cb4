use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("weight entry {value} at position {index} is odd")]
    OddEntry { index: usize, value: i64 },
    #[error("weight entries are not weakly decreasing at position {index}")]
    NotDecreasing { index: usize },
    #[error("weight entry {value} at position {index} is negative")]
    NegativeEntry { index: usize, value: i64 },
    #[error("rank mismatch: expected {expected}, got {found}")]
    RankMismatch { expected: usize, found: usize },
    #[error("point is not in the {region}: {reason}")]
    NotInChamber { region: &'static str, reason: String },

    #[error("quadrature needs at least 2 nodes per axis, got {0}")]
    InvalidNodeCount(usize),
    #[error("quadrature grid under-resolved for degree {degree}: relative change {change:.3e} exceeds {tolerance:.1e}")]
    GridUnderResolved {
        degree: u32,
        change: f64,
        tolerance: f64,
    },
    #[error("Gram-Schmidt breakdown at basis weight {weight}")]
    NumericBreakdown { weight: String },

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("operation requires rank one, got q = {0}")]
    RankNotOne(usize),
    #[error("division algebra of dimension d = {0} is not supported on this path")]
    UnsupportedAlgebra(u32),
    #[error("parameter p = {p} is not supported on this path: {reason}")]
    UnsupportedParameter { p: f64, reason: String },
    #[error("Metropolis chain did not converge: {0}")]
    NotConverged(String),
    #[error("zero principal minor of order {order} raised to negative power")]
    SingularMinor { order: usize },
    #[error("Bessel series argument |z| = {z} outside the supported range")]
    SeriesRange { z: f64 },
    #[error("matrix sampler needs integer p, got {0}")]
    NonIntegerP(f64),

    #[error("linearization row ({lambda}) x ({mu}) has coefficient {value:.3e} at {tau}")]
    InadmissibleRow {
        lambda: String,
        mu: String,
        tau: String,
        value: f64,
    },
    /// `progress` locates the abort in a simulation, e.g. " (trajectory 3, step 17)".
    #[error("walk reached {weight}, beyond degree cap {cap}{progress}")]
    DegreeCapExceeded { weight: String, cap: u32, progress: String },
    #[error("Bessel reference too noisy at n = {n}: stderr {stderr:.3e} vs error {error:.3e}")]
    BesselUncertain { n: u32, stderr: f64, error: f64 },
    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("parse error: {0}")]
    Parse(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
