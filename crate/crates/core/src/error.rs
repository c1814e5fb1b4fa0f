use thiserror::Error;

/// Errors raised anywhere in the fitting pipeline.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum GacmError {
    #[error("value {value} lies outside the unit interval [0, 1]")]
    Domain { value: f64 },

    #[error("covariate column `{column}` is constant; it cannot be rescaled or given knots")]
    DegenerateCovariate { column: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("centering failed: raw basis function b_1 has zero sample mean")]
    Centering,

    #[error("weighted Gram matrix is singular even after jitter")]
    Singular,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no groups were selected")]
    NothingSelected,

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("too many failed bootstrap replicates: {failed} of {total}")]
    BootstrapFailures { failed: usize, total: usize },

    #[error("at lambda = {lambda}: {source}")]
    AtLambda {
        lambda: f64,
        #[source]
        source: Box<GacmError>,
    },

    #[error("input error: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, GacmError>;
