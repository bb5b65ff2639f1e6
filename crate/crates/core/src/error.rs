use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An input that must be finite was NaN or infinite.
    NonFinite(&'static str),
    /// An input lies outside the domain of the operation.
    Domain(&'static str),
    /// `|gamma_2|` is below the inversion threshold.
    DegenerateEstimate { gamma2: f64 },
    /// Recursive least squares covariance is no longer positive definite.
    LostPositiveDefiniteness,
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// Quadratic cost could not be factored even after regularization.
    NotPositiveDefinite,
    /// No human-driven vehicle precedes the controlled one.
    EmptyPlatoon,
    EmptyTrace,
    InvalidConfig {
        key: &'static str,
        reason: &'static str,
    },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFinite(what) => write!(f, "non-finite value for {what}"),
            Error::Domain(what) => write!(f, "value out of domain: {what}"),
            Error::DegenerateEstimate { gamma2 } => {
                write!(f, "degenerate estimate, gamma2 = {gamma2:e}")
            }
            Error::LostPositiveDefiniteness => {
                f.write_str("estimator covariance lost positive definiteness")
            }
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected length {expected}, found {found}"),
            Error::NotPositiveDefinite => f.write_str("quadratic cost is not positive definite"),
            Error::EmptyPlatoon => f.write_str("no human-driven vehicle ahead"),
            Error::EmptyTrace => f.write_str("trace is empty"),
            Error::InvalidConfig { key, reason } => write!(f, "{key}: {reason}"),
        }
    }
}

impl core::error::Error for Error {}
