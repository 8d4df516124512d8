use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("{0}")]
    Domain(String),

    /// Anchor/node geometry admits no unique position fix.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Numerical inversion did not reach its accuracy target.
    #[error("numerical accuracy not reached: error bound {bound:.3e} exceeds {target:.1e}")]
    NumericalAccuracy { bound: f64, target: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn geometry(msg: impl Into<String>) -> Self {
        Error::DegenerateGeometry(msg.into())
    }
}
