use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid mixture parameters: {0}")]
    InvalidParams(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("theta[{component}] = {value} lies outside the natural domain ({lo}, {hi})")]
    Domain {
        component: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("component {component} has no support (weight mass {mass:e})")]
    EmptyComponent { component: usize, mass: f64 },

    #[error("weighted statistic {mean} for component {component} is outside the range of the mean function")]
    MeanOutOfRange { component: usize, mean: f64 },

    #[error("mean-function inversion did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },

    #[error("quadrature error estimate {error:e} exceeds tolerance {tolerance:e} after {subdivisions} subdivisions")]
    QuadratureFailure {
        error: f64,
        tolerance: f64,
        subdivisions: usize,
    },

    #[error("denominator {value:e} for component {component} is degenerate")]
    DegenerateDenominator { component: usize, value: f64 },

    #[error("probe is within {distance:e} of the fixed point for component {component}")]
    ProbeTooCloseToFixedPoint { component: usize, distance: f64 },

    #[error("operation requires an exponential-family model")]
    NotExpFam,

    #[error("operation is not defined for the {0} model")]
    UnsupportedKind(&'static str),

    #[error(
        "probe theta = {theta} is outside the regime theta > theta* + 1 (theta* = {theta_star})"
    )]
    ProbeOutsideRegime { theta: f64, theta_star: f64 },

    #[error("trajectory has only {usable} usable steps")]
    TrajectoryTooShort { usable: usize },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Strips any iteration context.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtIteration { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Error {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }
}
