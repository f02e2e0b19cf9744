use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A problem definition violates one of its invariants.
    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("eigendecomposition failed for population {population}: {reason}")]
    Eigen { population: usize, reason: String },

    /// The resolvent matrix could not be factorized at the requested abscissa.
    #[error("near-real-axis breakdown: resolvent is numerically singular")]
    SingularResolvent,

    #[error("degenerate spectrum: no positive eigenvalues to build support from")]
    DegenerateSpectrum,

    #[error("population {0} is unsampled at this N")]
    UnsampledPopulation(usize),

    /// Malformed run specification or data file.
    #[error("{0}")]
    Spec(String),

    #[error("{0} grid point(s) did not converge")]
    NotConverged(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
