//! Crate-wide error type.

/// Errors surfaced by the numerical and simulation layers.
///
/// The CLI maps these onto process exit codes: configuration problems
/// exit with 2, numerical failures with 3 and statistically unusable
/// results with 4.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Adaptive quadrature ran out of subdivisions. Carries the partial
    /// estimate so callers can decide whether it is still usable.
    #[error(
        "quadrature did not converge after {subdivisions} subdivisions \
         (partial estimate {estimate:e}, error bound {err_bound:e})"
    )]
    QuadratureNoConvergence {
        estimate: f64,
        err_bound: f64,
        subdivisions: usize,
    },

    /// Bessel-K evaluation outside the supported (order, argument) range.
    #[error("bessel K outside supported range: order {order}, argument {z}")]
    BesselRange { order: f64, z: f64 },

    /// An argument violated a documented precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A branching front grew past its configured population cap.
    #[error("population cap {cap} exceeded at generation {generation}")]
    PopulationCap { generation: u32, cap: usize },

    /// Too few surviving paths to fit a decay rate.
    #[error("insufficient data: {survivors} surviving paths at n = {at}, need at least {needed}")]
    InsufficientData {
        survivors: u64,
        needed: u64,
        at: u32,
    },

    /// Malformed experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
