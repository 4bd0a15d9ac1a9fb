use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("ring of {n} sites exceeds the dense superoperator limit of {max}")]
    TooLarge { n: usize, max: usize },

    #[error("eigensolver did not converge on a {dim}x{dim} matrix")]
    ConvergenceFailure { dim: usize },

    #[error("{unpaired} complex eigenvalues have no conjugate partner (tol_im = {tol:e})")]
    PairingAnomaly { unpaired: usize, tol: f64 },

    #[error("no root: {0}")]
    NoRoot(String),

    #[error("effective rate denominator vanishes at bond {bond}")]
    Pole { bond: usize },

    #[error("cosh(N f / 2) overflows for N f / 2 = {0}")]
    Overflow(f64),

    #[error("transport fit is not parabolic: relative residual {0:.3}")]
    NonParabolic(f64),

    #[error("zero mode vector")]
    ZeroVector,

    #[error("no values left after removing {sentinels} sentinel entries")]
    EmptyAfterFilter { sentinels: usize },

    #[error("cell ({i1}, {i2}), realization {realization}: {source}")]
    Cell {
        i1: usize,
        i2: usize,
        realization: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }

    /// True for failures of the numerics (as opposed to bad input or I/O).
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::ConvergenceFailure { .. }
            | Error::PairingAnomaly { .. }
            | Error::NoRoot(_)
            | Error::Pole { .. }
            | Error::Overflow(_)
            | Error::NonParabolic(_)
            | Error::ZeroVector
            | Error::EmptyAfterFilter { .. } => true,
            Error::Cell { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
